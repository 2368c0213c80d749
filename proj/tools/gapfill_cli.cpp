// Command-line front end: simulate, krige, frk fit|predict, pipeline run, validate.

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "gapfill/diagnostics.hpp"
#include "gapfill/errors.hpp"
#include "gapfill/experiments.hpp"
#include "gapfill/frk_io.hpp"
#include "gapfill/kriging.hpp"
#include "gapfill/pipeline.hpp"
#include "gapfill/reference.hpp"

namespace fs = std::filesystem;
using namespace gapfill;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string policy;
  std::optional<double> se_floor;
  int threads = 0;
  std::string out;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string x;
  while (std::getline(ss, x, ',')) {
    const auto b = x.find_first_not_of(" \t\r");
    const auto e = x.find_last_not_of(" \t\r");
    f.push_back(b == std::string::npos ? "" : x.substr(b, e - b + 1));
  }
  return f;
}

/// Planar table with columns s1, s2 and optionally t, z, sigma_eps.
struct PlanarTable {
  std::vector<SpaceTimePoint> points;
  std::vector<double> z, sigma_eps;
};

PlanarTable read_planar(const fs::path& path, bool need_z) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": empty file", 1);
  const auto header = split_csv(line);
  auto col = [&](const std::string& name) -> int {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return static_cast<int>(k);
    }
    return -1;
  };
  const int c1 = col("s1"), c2 = col("s2"), ct = col("t"), cz = col("z"), ce = col("sigma_eps");
  if (c1 < 0 || c2 < 0) throw IoError(path.string() + ": header needs s1 and s2", 1);
  if (need_z && cz < 0) throw IoError(path.string() + ": header needs z", 1);
  PlanarTable t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw IoError(path.string() + ": wrong field count", lineno);
    try {
      auto num = [&](int c) { return std::stod(f[static_cast<std::size_t>(c)]); };
      t.points.push_back({Location::planar(num(c1), num(c2)), ct >= 0 ? num(ct) : 0.0});
      if (cz >= 0) t.z.push_back(num(cz));
      if (ce >= 0) t.sigma_eps.push_back(num(ce));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ": bad number", lineno);
    }
  }
  return t;
}

Dataset to_dataset(const PlanarTable& t, std::optional<double> sigma_eps) {
  Dataset d;
  d.points = t.points;
  d.z = Eigen::Map<const Eigen::VectorXd>(t.z.data(), static_cast<Eigen::Index>(t.z.size()));
  if (!t.sigma_eps.empty()) {
    d.sigma_eps = Eigen::Map<const Eigen::VectorXd>(t.sigma_eps.data(), static_cast<Eigen::Index>(t.sigma_eps.size()));
  } else if (sigma_eps) {
    d.sigma_eps = Eigen::VectorXd::Constant(d.z.size(), *sigma_eps);
  } else {
    throw InvalidArgumentError("data lack a sigma_eps column; pass --sigma-eps");
  }
  d.validate();
  return d;
}

std::ostream& output(const Common& c, const std::string& name, std::ofstream& file) {
  if (c.out.empty()) return std::cout;
  fs::create_directories(c.out);
  file.open(fs::path(c.out) / name);
  if (!file) throw IoError("cannot write " + (fs::path(c.out) / name).string());
  return file;
}

void write_prediction(std::ostream& os, const PredictionResult& r) {
  os << "s1,s2,t,pred,se_process,se_observation,prior_only\n";
  os.precision(10);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    os << r.points[i].loc.x << ',' << r.points[i].loc.y << ',' << r.points[i].t << ',' << r.pred(k) << ','
       << r.se_process(k) << ',' << r.se_observation(k) << ','
       << (r.prior_only.empty() ? 0 : static_cast<int>(r.prior_only[i])) << '\n';
  }
}

PredictionSpace parse_space(const std::string& s) {
  if (s == "process") return PredictionSpace::Process;
  if (s == "observation") return PredictionSpace::Observation;
  throw InvalidArgumentError("space must be process or observation");
}

std::vector<std::pair<int, int>> parse_lattices(const std::string& spec) {
  std::vector<std::pair<int, int>> out;
  for (const auto& tok : split_csv(spec)) {
    const auto x = tok.find('x');
    if (x == std::string::npos) throw InvalidArgumentError("basis entries look like 6x6");
    out.emplace_back(std::stoi(tok.substr(0, x)), std::stoi(tok.substr(x + 1)));
  }
  if (out.empty()) throw InvalidArgumentError("empty basis specification");
  return out;
}

int run_simulate(const Common& c, int example, int n_seeds) {
  std::ofstream file;
  auto& os = output(c, "simulate_example" + std::to_string(example) + ".csv", file);
  os.precision(6);
  os << std::fixed;
  for (int s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(s);
    const auto exp = simulate_experiment({}, seed);
    if (example == 1 || example == 3) {
      if (s == 0) os << "seed,rmspe,process_vs_truth,process_vs_left_out,observation_vs_truth,observation_vs_left_out\n";
      const auto r = example == 1 ? run_example1(exp) : run_example3(exp).scores;
      os << seed << ',' << r.rmspe << ',' << r.process_vs_truth << ',' << r.process_vs_left_out << ','
         << r.observation_vs_truth << ',' << r.observation_vs_left_out << '\n';
    } else if (example == 4) {
      if (s == 0) os << "seed,rmspe_full,rmspe_binned\n";
      const auto r = run_example4(exp);
      os << seed << ',' << r.rmspe_full << ',' << r.rmspe_binned << '\n';
    } else {
      if (s == 0) os << "seed,rmspe_full,rmspe_frk,rmspe_window\n";
      const auto fit = run_example3(exp).fitted;
      const auto r = run_example5(exp, fit);
      os << seed << ',' << r.rmspe_full << ',' << r.rmspe_frk << ',' << r.rmspe_window << '\n';
    }
    os.flush();
  }
  return 0;
}

PipelineConfig pipeline_config(const Common& c, CLI::App& app) {
  PipelineConfig cfg;
  if (!c.config.empty()) cfg = read_config(fs::path(c.config));
  if (app.count("--seed")) cfg.seed = c.seed;
  if (!c.policy.empty()) cfg.policy = parse_policy(c.policy);
  if (c.se_floor) cfg.se_floor = *c.se_floor;
  if (c.threads > 0) cfg.threads = c.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gap-filling of irregular retrievals into gridded prediction and standard-error maps"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config, "Key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", c.seed, "Random seed");
  app.add_option("--policy", c.policy, "Retrieval filter policy")->check(CLI::IsMember({"v7", "v8"}));
  app.add_option("--se-floor", c.se_floor, "Lower bound on retrieval SEs (ppm)")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", c.threads, "Worker threads")->envname("GAPFILL_THREADS")->check(CLI::PositiveNumber);
  app.add_option("--out", c.out, "Output directory");

  auto* sim = app.add_subcommand("simulate", "Run the unit-square covariance experiments");
  int example = 1, n_seeds = 1;
  sim->add_option("--example", example, "Experiment: 1 (kriging), 3 (FRK), 4 (fixed bins), 5 (low SNR)")
      ->check(CLI::IsMember({1, 3, 4, 5}));
  sim->add_option("--replicates", n_seeds, "Number of seeds, starting at --seed")->check(CLI::PositiveNumber);

  auto* krige = app.add_subcommand("krige", "Kriging with a known exponential covariance");
  std::string data_path, pred_path, method = "simple", space = "process";
  double sigma2 = 1.0, tau = 0.15, delta = 0.1, bin_width = 0.1, bin_origin = 0.0;
  std::optional<double> tau_t, sigma_eps;
  krige->add_option("--data", data_path, "CSV with s1, s2[, t], z[, sigma_eps]")->required()->check(CLI::ExistingFile);
  krige->add_option("--pred", pred_path, "CSV with s1, s2[, t]")->required()->check(CLI::ExistingFile);
  krige->add_option("--method", method)->check(CLI::IsMember({"simple", "fixed-bin", "moving-window"}));
  krige->add_option("--space", space)->check(CLI::IsMember({"process", "observation"}));
  krige->add_option("--sigma2", sigma2, "Process variance");
  krige->add_option("--tau", tau, "Spatial e-folding length");
  krige->add_option("--tau-t", tau_t, "Temporal e-folding length (separable covariance)");
  krige->add_option("--sigma-eps", sigma_eps, "Constant retrieval error SD");
  krige->add_option("--delta", delta, "Moving-window width");
  krige->add_option("--bin-width", bin_width, "Fixed-bin width");
  krige->add_option("--bin-origin", bin_origin, "Fixed-bin origin");

  auto* frk = app.add_subcommand("frk", "Fixed Rank Kriging");
  frk->require_subcommand(1);
  auto* fit = frk->add_subcommand("fit", "Estimate K and sigma2_zeta by EM");
  std::string basis_spec = "3x3,9x9,27x27", mode = "structured", model_path;
  std::array<double, 4> domain{0.0, 1.0, 0.0, 1.0};
  double tol = 1e-6;
  int max_iter = 200;
  fit->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  fit->add_option("--basis", basis_spec, "Lattices per resolution, e.g. 3x3,9x9,27x27");
  fit->add_option("--mode", mode)->check(CLI::IsMember({"structured", "free"}));
  fit->add_option("--domain", domain, "s1_lo s1_hi s2_lo s2_hi");
  fit->add_option("--sigma-eps", sigma_eps);
  fit->add_option("--tol", tol);
  fit->add_option("--max-iter", max_iter);
  fit->add_option("--model", model_path, "Output model file")->required();
  auto* predict = frk->add_subcommand("predict", "Predict from a fitted model");
  predict->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--pred", pred_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--space", space)->check(CLI::IsMember({"process", "observation"}));

  auto* pipe = app.add_subcommand("pipeline", "Daily product pipeline");
  pipe->require_subcommand(1);
  auto* run = pipe->add_subcommand("run", "Filter, aggregate and fit one product per eligible day");
  std::vector<std::string> inputs;
  run->add_option("inputs", inputs, "Retrieval files")->required()->check(CLI::ExistingFile);

  auto* val = app.add_subcommand("validate", "Compare products with reference stations");
  std::string products_dir, ref_path, stations_path;
  std::vector<std::string> exclude;
  double level = 0.95, half_window = 30.0;
  val->add_option("--products", products_dir)->required()->check(CLI::ExistingDirectory);
  val->add_option("--reference", ref_path)->required()->check(CLI::ExistingFile);
  val->add_option("--stations", stations_path)->required()->check(CLI::ExistingFile);
  val->add_option("--exclude", exclude, "Station ids for extra 'Total (w/o id)' rows");
  val->add_option("--level", level);
  val->add_option("--half-window", half_window, "Colocation half window (minutes)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return run_simulate(c, example, n_seeds);

    if (*krige) {
      const auto data = to_dataset(read_planar(data_path, true), sigma_eps);
      const auto pts = read_planar(pred_path, false).points;
      const auto cov = tau_t ? CovarianceFunction::separable(sigma2, tau, *tau_t)
                             : CovarianceFunction::exponential(sigma2, tau);
      KrigingOptions opts;
      opts.space = parse_space(space);
      PredictionResult r;
      if (method == "simple") r = simple_krige(data, cov, pts, opts);
      else if (method == "fixed-bin") r = fixed_bin_krige(data, cov, bin_width, bin_origin, pts, opts);
      else r = moving_window_krige(data, cov, delta, pts, opts);
      std::ofstream file;
      write_prediction(output(c, "krige.csv", file), r);
      return 0;
    }

    if (*fit) {
      const auto data = to_dataset(read_planar(data_path, true), sigma_eps);
      GridSpec dom{Frame::Planar, domain[0], domain[1], domain[2], domain[3], 1, 1};
      const auto basis = build_basis_planar(dom, parse_lattices(basis_spec));
      EmOptions opts;
      opts.mode = mode == "free" ? KMode::FreeBlocks : KMode::Structured;
      opts.tol = tol;
      opts.max_iter = max_iter;
      const auto fitted = fit_em(data, basis, opts);
      save_frk(model_path, fitted);
      std::cerr << "basis functions: " << basis.size() << ", EM iterations: " << fitted.iterations
                << (fitted.converged ? " (converged)" : " (not converged)") << ", sigma2_zeta: " << fitted.sigma2_zeta
                << ", loglik: " << fitted.loglik.back() << '\n';
      return 0;
    }

    if (*predict) {
      const auto fitted = load_frk(model_path);
      const auto pts = read_planar(pred_path, false).points;
      FrkPredictOptions opts;
      opts.space = parse_space(space);
      std::ofstream file;
      write_prediction(output(c, "frk_predict.csv", file), frk_predict(fitted, pts, opts));
      return 0;
    }

    if (*run) {
      const auto cfg = pipeline_config(c, app);
      const fs::path out = c.out.empty() ? fs::path("products") : fs::path(c.out);
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      const auto res = run_pipeline(paths, cfg, [&](const Level3Product& p) {
        write_product(out, p, cfg);
        std::cerr << format_date(p.target_day) << ": " << p.cells.size() << " cells, " << p.em_iterations
                  << " EM iterations\n";
      });
      std::ofstream log(out / "skipped_days.csv");
      write_skip_log(log, res.skipped);
      std::cerr << res.n_records_in << " records read, " << res.n_records_kept << " kept, " << res.n_cells
                << " cells; " << res.products.size() << " products, " << res.skipped.size() << " days skipped\n";
      return 0;
    }

    if (*val) {
      std::vector<Level3Product> products;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(products_dir)) {
        if (e.path().extension() == ".csv" && e.path().stem().string().rfind("L3_", 0) == 0) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) products.push_back(read_product(f));
      const auto stations = read_stations(fs::path(stations_path));
      const auto coloc = reference_colocate(read_reference(fs::path(ref_path)), stations, half_window);
      for (const auto& s : coloc.missing_stations) std::cerr << "warning: no metadata for station " << s << '\n';
      const auto rows = validate_products(products, coloc.rows, level, exclude);
      std::ofstream file;
      write_report_table(output(c, "validation.csv", file), rows);
      return 0;
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
