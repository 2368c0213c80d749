#include "gapfill/frk_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gapfill/errors.hpp"

namespace gapfill {

static_assert(std::endian::native == std::endian::little, "frk_io assumes a little-endian host");

namespace {

struct Record {
  std::uint8_t type = 0;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
};

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated model file");
  return v;
}

class Writer {
 public:
  void f64(const std::string& name, std::vector<std::uint64_t> dims, const double* data) {
    Record r;
    r.type = 0;
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    r.dims = std::move(dims);
    r.f64.assign(data, data + n);
    names_.push_back(name);
    recs_.push_back(std::move(r));
  }
  void scalar(const std::string& name, double v) { f64(name, {}, &v); }
  void vec(const std::string& name, const Eigen::VectorXd& v) {
    f64(name, {static_cast<std::uint64_t>(v.size())}, v.data());
  }
  void mat(const std::string& name, const Eigen::MatrixXd& m) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    f64(name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, rm.data());
  }
  void i64(const std::string& name, std::int64_t v) {
    Record r;
    r.type = 1;
    r.i64 = {v};
    names_.push_back(name);
    recs_.push_back(std::move(r));
  }
  void flush(std::ostream& os) const {
    os.write("GFRK", 4);
    put<std::uint32_t>(os, kFrkFormatVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(recs_.size()));
    for (std::size_t k = 0; k < recs_.size(); ++k) {
      const auto& r = recs_[k];
      put<std::uint16_t>(os, static_cast<std::uint16_t>(names_[k].size()));
      os.write(names_[k].data(), static_cast<std::streamsize>(names_[k].size()));
      put<std::uint8_t>(os, r.type);
      put<std::uint8_t>(os, static_cast<std::uint8_t>(r.dims.size()));
      for (auto d : r.dims) put<std::uint64_t>(os, d);
      if (r.type == 0) {
        os.write(reinterpret_cast<const char*>(r.f64.data()), static_cast<std::streamsize>(r.f64.size() * 8));
      } else {
        os.write(reinterpret_cast<const char*>(r.i64.data()), static_cast<std::streamsize>(r.i64.size() * 8));
      }
    }
    if (!os) throw IoError("failed to write model file");
  }

 private:
  std::vector<std::string> names_;
  std::vector<Record> recs_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GFRK", 4) != 0) throw IoError("not a gapfill FRK model file");
    const auto version = get<std::uint32_t>(is);
    if (version != kFrkFormatVersion) throw IoError("unsupported model file version " + std::to_string(version));
    const auto count = get<std::uint32_t>(is);
    for (std::uint32_t k = 0; k < count; ++k) {
      const auto len = get<std::uint16_t>(is);
      std::string name(len, '\0');
      is.read(name.data(), len);
      Record r;
      r.type = get<std::uint8_t>(is);
      const auto rank = get<std::uint8_t>(is);
      std::uint64_t n = 1;
      for (std::uint8_t d = 0; d < rank; ++d) {
        r.dims.push_back(get<std::uint64_t>(is));
        n *= r.dims.back();
      }
      if (r.type == 0) {
        r.f64.resize(n);
        is.read(reinterpret_cast<char*>(r.f64.data()), static_cast<std::streamsize>(n * 8));
      } else if (r.type == 1) {
        r.i64.resize(n);
        is.read(reinterpret_cast<char*>(r.i64.data()), static_cast<std::streamsize>(n * 8));
      } else {
        throw IoError("unknown record type in model file");
      }
      if (!is) throw IoError("truncated model file");
      recs_.emplace(std::move(name), std::move(r));
    }
  }

  bool has(const std::string& name) const { return recs_.contains(name); }
  const Record& at(const std::string& name) const {
    auto it = recs_.find(name);
    if (it == recs_.end()) throw IoError("model file lacks record '" + name + "'");
    return it->second;
  }
  double scalar(const std::string& name) const { return at(name).f64.at(0); }
  std::int64_t integer(const std::string& name) const { return at(name).i64.at(0); }
  Eigen::VectorXd vec(const std::string& name) const {
    const auto& r = at(name);
    return Eigen::Map<const Eigen::VectorXd>(r.f64.data(), static_cast<Eigen::Index>(r.f64.size()));
  }
  Eigen::MatrixXd mat(const std::string& name) const {
    const auto& r = at(name);
    if (r.dims.size() != 2) throw IoError("record '" + name + "' is not a matrix");
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(r.f64.data(), static_cast<Eigen::Index>(r.dims[0]),
                                      static_cast<Eigen::Index>(r.dims[1]));
  }
  std::vector<double> list(const std::string& name) const { return at(name).f64; }

 private:
  std::map<std::string, Record> recs_;
};

}  // namespace

void write_frk(std::ostream& os, const FittedFRK& f) {
  Writer w;
  const auto& basis = f.basis;
  w.i64("frame", basis.frame() == Frame::Planar ? 0 : 1);
  w.scalar("domain_diameter", basis.domain_diameter());
  w.i64("n_res", basis.n_res());
  for (int q = 0; q < basis.n_res(); ++q) {
    const auto& r = basis.resolutions()[static_cast<std::size_t>(q)];
    Eigen::MatrixXd c(static_cast<Eigen::Index>(r.centres.size()), 2);
    for (std::size_t i = 0; i < r.centres.size(); ++i) {
      c(static_cast<Eigen::Index>(i), 0) = r.centres[i].x;
      c(static_cast<Eigen::Index>(i), 1) = r.centres[i].y;
    }
    w.mat("spatial." + std::to_string(q) + ".centres", c);
    w.scalar("spatial." + std::to_string(q) + ".aperture", r.aperture);
  }
  if (basis.temporal()) {
    const auto& t = *basis.temporal();
    w.f64("temporal.centres", {t.centres.size()}, t.centres.data());
    w.scalar("temporal.aperture", t.aperture);
    w.scalar("temporal.window", t.window);
  }
  for (std::size_t q = 0; q < f.K.blocks.size(); ++q) w.mat("K." + std::to_string(q), f.K.blocks[q]);
  w.scalar("sigma2_zeta", f.sigma2_zeta);
  if (f.params) {
    w.f64("params.theta1", {f.params->theta1.size()}, f.params->theta1.data());
    w.f64("params.theta2", {f.params->theta2.size()}, f.params->theta2.data());
    w.f64("params.theta3", {f.params->theta3.size()}, f.params->theta3.data());
  }
  w.vec("post_mean", f.post_mean);
  w.mat("post_cov", f.post_cov);
  Eigen::MatrixXd pts(static_cast<Eigen::Index>(f.data_points.size()), 3);
  for (std::size_t i = 0; i < f.data_points.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    pts(k, 0) = f.data_points[i].loc.x;
    pts(k, 1) = f.data_points[i].loc.y;
    pts(k, 2) = f.data_points[i].t;
  }
  w.mat("data.points", pts);
  w.vec("data.sigma_eps", f.data_sigma_eps);
  w.vec("data.resid", f.data_resid);
  w.f64("fit.loglik", {f.loglik.size()}, f.loglik.data());
  w.i64("fit.iterations", f.iterations);
  w.i64("fit.converged", f.converged ? 1 : 0);
  w.flush(os);
}

FittedFRK read_frk(std::istream& is) {
  const Reader r(is);
  const Frame frame = r.integer("frame") == 0 ? Frame::Planar : Frame::Sphere;
  const auto n_res = r.integer("n_res");
  std::vector<SpatialResolution> res;
  for (std::int64_t q = 0; q < n_res; ++q) {
    const auto c = r.mat("spatial." + std::to_string(q) + ".centres");
    SpatialResolution sr;
    for (Eigen::Index i = 0; i < c.rows(); ++i) sr.centres.push_back({frame, c(i, 0), c(i, 1)});
    sr.aperture = r.scalar("spatial." + std::to_string(q) + ".aperture");
    res.push_back(std::move(sr));
  }
  std::optional<TemporalBasis> temporal;
  if (r.has("temporal.centres")) {
    temporal = TemporalBasis{r.list("temporal.centres"), r.scalar("temporal.aperture"), r.scalar("temporal.window")};
  }
  BasisSet basis(frame, std::move(res), std::move(temporal), r.scalar("domain_diameter"));
  BlockDiagonal K;
  for (std::int64_t q = 0; q < n_res; ++q) K.blocks.push_back(r.mat("K." + std::to_string(q)));
  FittedFRK f(std::move(basis), std::move(K), r.scalar("sigma2_zeta"));
  if (r.has("params.theta1")) {
    f.params = FRKParams{r.list("params.theta1"), r.list("params.theta2"), r.list("params.theta3"), f.sigma2_zeta};
  }
  f.post_mean = r.vec("post_mean");
  f.post_cov = r.mat("post_cov");
  const auto pts = r.mat("data.points");
  for (Eigen::Index i = 0; i < pts.rows(); ++i) f.data_points.push_back({{frame, pts(i, 0), pts(i, 1)}, pts(i, 2)});
  f.data_sigma_eps = r.vec("data.sigma_eps");
  f.data_resid = r.vec("data.resid");
  f.loglik = r.list("fit.loglik");
  f.iterations = static_cast<int>(r.integer("fit.iterations"));
  f.converged = r.integer("fit.converged") != 0;
  return f;
}

void save_frk(const std::filesystem::path& path, const FittedFRK& fitted) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_frk(os, fitted);
}

FittedFRK load_frk(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_frk(is);
}

}  // namespace gapfill
