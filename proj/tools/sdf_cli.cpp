// SPDX-License-Identifier: Apache-2.0
//
// sdf: generate, fit, evaluate and render spline deformation fields.
//
// Exit codes: 0 success, 1 I/O or malformed file, 2 usage or validation,
// 3 numeric divergence.

#include "sdf/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

enum Exit { kOk = 0, kIo = 1, kUsage = 2, kDiverged = 3 };

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

unsigned threads_from_env() {
  const char* s = std::getenv("SDF_THREADS");
  if (!s || !*s) return 0;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (*end != '\0' || v < 0 || v > 1024) throw Usage("SDF_THREADS must be an integer in [0, 1024]");
  return static_cast<unsigned>(v);
}

std::vector<double> parse_times(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = sdf::ckpt::trim(tok);
    std::size_t used = 0;
    double t = 0.0;
    try {
      t = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw Usage("bad time value: '" + tok + "'");
    }
    if (used != tok.size()) throw Usage("bad time value: '" + tok + "'");
    if (!(t >= 0.0 && t <= 1.0)) throw Usage("time " + tok + " outside [0, 1]");
    out.push_back(t);
  }
  if (out.empty()) throw Usage("--times is empty");
  return out;
}

std::vector<double> dense_times(int frames) {
  if (frames < 1) throw Usage("--dense must be >= 1");
  std::vector<double> out;
  for (int i = 0; i < frames; ++i) out.push_back(frames == 1 ? 0.0 : static_cast<double>(i) / (frames - 1));
  return out;
}

std::string frame_name(const std::string& dir, std::size_t i) {
  std::ostringstream os;
  os << dir << "/frame_" << std::setw(4) << std::setfill('0') << i << ".ply";
  return os.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw sdf::IoError("cannot create directory " + dir + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string kind, out;
  std::size_t points = 1000, frames = 120;
  std::uint64_t seed = 0;
  double noise = 0.0;
};

int cmd_gen(const GenArgs& a) {
  const auto kind = sdf::io::parse_scene(a.kind);
  auto traj = sdf::io::gen_synthetic(kind, a.points, a.frames, a.seed);
  if (a.noise > 0.0) traj = sdf::io::add_noise(traj, a.noise, a.seed + 1);
  sdf::io::write_traj(traj, a.out);
  std::cout << "gen: kind=" << a.kind << " frames=" << a.frames << " points=" << a.points << " seed=" << a.seed
            << " bytes=" << std::filesystem::file_size(a.out) << " -> " << a.out << "\n";
  return kOk;
}

struct FitArgs {
  std::string data, encoder = "siren-resfields", out_ckpt, log, config;
  std::size_t stride = 4;
  double frac = 0.25;
  int rank = 8, K = 2;
  std::optional<int> knots;
  double alpha = 1.0, beta = 0.01, lr = 1e-3;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  bool quintic = false, no_timing = false;
};

int cmd_fit(const FitArgs& a, const CLI::App& sub, unsigned threads) {
  const auto traj = sdf::io::read_traj(a.data);
  const auto split = sdf::io::split(traj, {a.stride, a.frac}, a.seed);
  if (!split.warning.empty()) std::cerr << "warning: " << split.warning << "\n";

  if (a.encoder == "replay") {
    sdf::ckpt::write(a.out_ckpt, sdf::ReplayDeformer(traj).to_checkpoint());
    std::cout << "fit: replay checkpoint of " << traj.n_frames() << " frames -> " << a.out_ckpt << "\n";
    return kOk;
  }

  sdf::train::TrainConfig cfg;
  if (!a.config.empty()) {
    sdf::train::apply_train_config(sdf::ckpt::parse_key_values(sdf::ckpt::detail::read_file(a.config)), cfg);
  }
  // Flags given on the command line win over the run config file.
  auto given = [&](const char* name) { return sub.count(name) > 0; };
  if (given("--encoder") || a.config.empty()) cfg.field.encoder = sdf::parse_encoder(a.encoder);
  if (given("--rank") || a.config.empty()) cfg.field.rank = a.rank;
  if (given("--K") || a.config.empty()) cfg.K = a.K;
  if (a.knots) cfg.n_knots = a.knots;
  if (given("--alpha") || a.config.empty()) cfg.loss.alpha = a.alpha;
  if (given("--beta") || a.config.empty()) cfg.loss.beta = a.beta;
  if (given("--steps") || a.config.empty()) cfg.steps = a.steps;
  if (given("--lr") || a.config.empty()) cfg.lr = a.lr;
  if (given("--seed") || a.config.empty()) cfg.seed = a.seed;
  if (a.quintic) cfg.field.quintic = true;
  if (cfg.field.encoder == sdf::EncoderKind::coupled4d) cfg.field.rank = 0;
  cfg.threads = threads;

  auto res = sdf::train::train(traj, split, cfg);
  sdf::ckpt::write(a.out_ckpt, res.model->to_checkpoint());
  if (!a.log.empty()) sdf::ckpt::detail::write_file(a.log, res.log.to_csv(!a.no_timing));
  const auto& recs = res.log.records;
  std::cout << "fit: encoder=" << sdf::encoder_name(cfg.field.encoder)
            << " n_knots=" << *res.log.find_meta("n_knots") << " steps=" << recs.size();
  if (!recs.empty()) std::cout << " final_total=" << recs.back().total;
  std::cout << " -> " << a.out_ckpt << "\n";
  if (res.log.diverged) {
    std::cerr << "error: training diverged: " << res.log.message << "; last good parameters saved\n";
    return kDiverged;
  }
  return kOk;
}

struct EvalArgs {
  std::string data, ckpt, report;
  std::size_t stride = 4, k_neighbors = sdf::metrics::kDefaultNeighbors;
  double scale = 1e4;
};

int cmd_eval(const EvalArgs& a, unsigned threads) {
  const auto traj = sdf::io::read_traj(a.data);
  auto model = sdf::load_deformer(sdf::ckpt::read(a.ckpt));
  if (model->n_points() != traj.n_points())
    throw Usage("checkpoint describes " + std::to_string(model->n_points()) + " points but " + a.data + " has " +
                std::to_string(traj.n_points()));
  const auto split = sdf::io::split(traj, {a.stride, 1.0}, 0);
  if (!split.warning.empty()) std::cerr << "warning: " << split.warning << "\n";
  const auto rep = sdf::train::evaluate(*model, traj, split, a.k_neighbors, a.scale, threads);
  if (!a.report.empty()) sdf::metrics::write_report(a.report, rep.rows);
  std::cout << "eval: test_frames=" << rep.rows.size() << " epe=" << rep.epe;
  if (rep.no_motion)
    std::cout << " mean_I=no-motion";
  else
    std::cout << " mean_I=" << rep.mean_i;
  std::cout << " gt_mean_I=" << rep.gt_mean_i << "\n";
  return kOk;
}

struct InterpArgs {
  std::string ckpt, times, out_dir;
  std::optional<int> dense;
};

int cmd_interp(const InterpArgs& a) {
  if (a.times.empty() == !a.dense) throw Usage("interp needs exactly one of --times or --dense");
  const auto ts = a.dense ? dense_times(*a.dense) : parse_times(a.times);
  auto model = sdf::load_deformer(sdf::ckpt::read(a.ckpt));
  ensure_dir(a.out_dir);
  for (std::size_t i = 0; i < ts.size(); ++i) sdf::io::export_ply(model->deform(ts[i]), nullptr, frame_name(a.out_dir, i));
  std::cout << "interp: wrote " << ts.size() << " frames -> " << a.out_dir << "\n";
  return kOk;
}

struct AdvectArgs {
  std::string ckpt, out;
  double from = 1.0, dt = 0.0;
};

int cmd_advect(const AdvectArgs& a) {
  if (!(a.from >= 0.0 && a.from <= 1.0)) throw Usage("--from must be in [0, 1]");
  if (!(a.dt >= 0.0)) throw Usage("--dt must be >= 0");
  auto model = sdf::load_deformer(sdf::ckpt::read(a.ckpt));
  sdf::io::export_ply(model->advect(a.from, a.dt), nullptr, a.out);
  std::cout << "advect: from=" << a.from << " dt=" << a.dt << " -> " << a.out << "\n";
  return kOk;
}

struct FlowArgs {
  std::string ckpt, out_dir;
  int frames = 30;
};

int cmd_flow(const FlowArgs& a) {
  const auto ts = dense_times(a.frames);
  auto model = sdf::load_deformer(sdf::ckpt::read(a.ckpt));
  ensure_dir(a.out_dir);
  std::vector<sdf::Matrix> pos, vel;
  double vmax = 0.0;
  for (double t : ts) {
    pos.push_back(model->deform(t));
    vel.push_back(model->velocity(t));
    vmax = std::max(vmax, vel.back().rowwise().norm().maxCoeff());
  }
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto colors = sdf::io::velocity_colors(vel[i], vmax);
    sdf::io::export_ply(pos[i], &colors, frame_name(a.out_dir, i));
  }
  std::cout << "flow: wrote " << ts.size() << " frames, max_speed=" << vmax << " -> " << a.out_dir << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spline deformation fields: fit, evaluate and render point trajectories"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "write a synthetic trajectory file");
  g->add_option("--kind", gen.kind, "rigid-translate | rotate | bending-sheet | swing-arm | composite")->required();
  g->add_option("--points", gen.points, "number of points")->check(CLI::PositiveNumber);
  g->add_option("--frames", gen.frames, "number of frames")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "random seed");
  g->add_option("--noise", gen.noise, "Gaussian noise sigma added to positions")->check(CLI::NonNegativeNumber);
  g->add_option("--out", gen.out, "output SDFTRAJ1 file")->required();

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "fit a field to the training frames of a trajectory");
  f->add_option("--data", fit.data, "SDFTRAJ1 input")->required();
  f->add_option("--stride", fit.stride, "train on every stride-th frame")->check(CLI::PositiveNumber);
  f->add_option("--frac", fit.frac, "fraction of points supervised")->check(CLI::Range(0.0, 1.0));
  f->add_option("--encoder", fit.encoder,
                "siren-resfields | pe-resfields | triplanes | triaxes | coupled4d-baseline | replay");
  f->add_option("--rank", fit.rank, "temporal code rank")->check(CLI::NonNegativeNumber);
  auto* knots = f->add_option("--knots", fit.knots, "explicit knot count")->check(CLI::Range(2, 100000));
  f->add_option("--K", fit.K, "timestamps per knot when --knots is omitted")
      ->check(CLI::PositiveNumber)
      ->excludes(knots);
  f->add_option("--alpha", fit.alpha, "velocity loss weight")->check(CLI::NonNegativeNumber);
  f->add_option("--beta", fit.beta, "acceleration loss weight")->check(CLI::NonNegativeNumber);
  f->add_option("--steps", fit.steps, "optimizer steps")->check(CLI::PositiveNumber);
  f->add_option("--lr", fit.lr, "MLP learning rate")->check(CLI::PositiveNumber);
  f->add_option("--seed", fit.seed, "random seed");
  f->add_option("--config", fit.config, "key=value run config; flags override it");
  f->add_flag("--quintic", fit.quintic, "quintic segments with predicted accelerations");
  f->add_option("--out-ckpt", fit.out_ckpt, "output checkpoint")->required();
  f->add_option("--log", fit.log, "RunLog CSV");
  f->add_flag("--no-timing", fit.no_timing, "write 0 in the wallclock_ms column");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint on the held-out frames");
  e->add_option("--data", ev.data, "SDFTRAJ1 ground truth")->required();
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--stride", ev.stride, "stride used for training")->check(CLI::PositiveNumber);
  e->add_option("--K-neighbors", ev.k_neighbors, "neighbors for Moran's I")->check(CLI::Range(2, 1000));
  e->add_option("--scale", ev.scale, "EPE multiplier")->check(CLI::PositiveNumber);
  e->add_option("--report", ev.report, "CSV report");

  InterpArgs in;
  auto* ip = app.add_subcommand("interp", "write PLY frames at requested times");
  ip->add_option("--ckpt", in.ckpt, "checkpoint")->required();
  auto* times = ip->add_option("--times", in.times, "comma-separated times in [0, 1]");
  ip->add_option("--dense", in.dense, "F evenly spaced frames over [0, 1]")->excludes(times);
  ip->add_option("--out-ply-dir", in.out_dir, "output directory")->required();

  AdvectArgs adv;
  auto* av = app.add_subcommand("advect", "extrapolate at constant velocity");
  av->add_option("--ckpt", adv.ckpt, "checkpoint")->required();
  av->add_option("--from", adv.from, "start time in [0, 1]");
  av->add_option("--dt", adv.dt, "time step, >= 0");
  av->add_option("--out", adv.out, "output PLY")->required();

  FlowArgs fl;
  auto* fw = app.add_subcommand("flow", "write velocity-colored PLY frames");
  fw->add_option("--ckpt", fl.ckpt, "checkpoint")->required();
  fw->add_option("--frames", fl.frames, "number of frames")->check(CLI::PositiveNumber);
  fw->add_option("--out-ply-dir", fl.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const unsigned threads = threads_from_env();
    if (*g) return cmd_gen(gen);
    if (*f) return cmd_fit(fit, *f, threads);
    if (*e) return cmd_eval(ev, threads);
    if (*ip) return cmd_interp(in);
    if (*av) return cmd_advect(adv);
    if (*fw) return cmd_flow(fl);
  } catch (const Usage& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const sdf::InvalidArgument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const sdf::FormatError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kIo;
  } catch (const sdf::IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kIo;
  } catch (const sdf::NumericError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDiverged;
  }
  return kUsage;
}
