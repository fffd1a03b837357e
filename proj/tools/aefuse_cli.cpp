#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aefuse.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace aefuse;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

json scores_json(const QualityScores& s) {
  return {{"en", s.en},         {"ag", s.ag},         {"ssim_a", s.ssim_a}, {"ssim_b", s.ssim_b},
          {"psnr_a", s.psnr_a}, {"psnr_b", s.psnr_b}, {"mi_a", s.mi_a},     {"mi_b", s.mi_b},
          {"viff", s.viff},     {"niqe", s.niqe},     {"brenner", s.brenner}, {"combined", s.combined}};
}

std::optional<NiqeModel> maybe_niqe(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_niqe_model(path);
}

const NiqeModel* ptr(const std::optional<NiqeModel>& m) { return m ? &*m : nullptr; }

ArchSpec resolve_spec(const std::string& name_or_file) {
  if (fs::is_regular_file(name_or_file)) return parse_arch(detail::read_file(name_or_file));
  const auto names = builtin_spec_names();
  if (std::find(names.begin(), names.end(), name_or_file) == names.end())
    throw UnknownAlgorithmError("unknown architecture '" + name_or_file + "'");
  return builtin_spec(name_or_file);
}

ImagePair load_pair(const std::string& a, const std::string& b, Task task) {
  return ImagePair(load_pnm(a), load_pnm(b), fs::path(a).stem().string(), task);
}

std::vector<ImageGray> load_corpus(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ImageGray> out;
  for (const auto& f : files) out.push_back(load_pnm(f));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image fusion toolkit: classical fusers, quality metrics, micro-network training and benchmarks"};
  app.require_subcommand(1);

  std::string a, b, out, algo = "lp", fused, niqe_path, weights_path, task_name = "ir_visible";

  auto* fuse = app.add_subcommand("fuse", "Fuse two images with a classical fuser or a trained network");
  fuse->add_option("--algo", algo, "Fuser id (avg, absmax, gradsel, lp, expw)");
  fuse->add_option("--weights", weights_path, "Network weight file; overrides --algo");
  fuse->add_option("--a", a, "First source")->required();
  fuse->add_option("--b", b, "Second source")->required();
  fuse->add_option("--out", out, "Output PGM")->required();

  auto* eval = app.add_subcommand("eval", "Print quality scores of a fused image as JSON");
  eval->add_option("--a", a)->required();
  eval->add_option("--b", b)->required();
  eval->add_option("--fused", fused)->required();
  eval->add_option("--niqe-model", niqe_path);

  std::string algos = "avg,absmax,gradsel,lp,expw";
  auto* select = app.add_subcommand("select", "Run the fuser bank and pick the best candidate");
  select->add_option("--a", a)->required();
  select->add_option("--b", b)->required();
  select->add_option("--algos", algos, "Comma-separated fuser ids");
  select->add_option("--out", out, "Write the selected image here");
  select->add_option("--niqe-model", niqe_path);

  std::string corpus;
  auto* niqe_fit = app.add_subcommand("niqe-fit", "Fit a NIQE model on a directory of pristine images");
  niqe_fit->add_option("--corpus", corpus)->required();
  niqe_fit->add_option("--out", out)->required();

  std::string spec_name = "gcb", data_dir, loss_csv, bank_dir, checkpoint_dir;
  int rounds = 0, epochs1 = 10, epochs2 = 100, checkpoint_every = 0;
  double lr1 = 0.001, lr2 = 0.0001;
  TrainConfig cfg;
  bool supervised = false;
  auto* train_cmd = app.add_subcommand("train", "Train a network toward the solution bank");
  train_cmd->add_option("--spec", spec_name, "Built-in spec name or spec file")->required();
  train_cmd->add_option("--data", data_dir, "Directory of <id>_a.pgm / <id>_b.pgm pairs")->required();
  train_cmd->add_option("--out", out, "Output weight file")->required();
  train_cmd->add_option("--rounds", rounds, "Evolution rounds; 0 trains once toward the classical bank");
  train_cmd->add_option("--epochs1", epochs1);
  train_cmd->add_option("--epochs2", epochs2, "0 skips the second phase");
  train_cmd->add_option("--lr1", lr1);
  train_cmd->add_option("--lr2", lr2);
  train_cmd->add_option("--batch", cfg.batch_size);
  train_cmd->add_option("--patch", cfg.patch);
  train_cmd->add_option("--threshold", cfg.loss_threshold, "Early-stop epoch mean loss; 0 disables");
  train_cmd->add_option("--seed", cfg.seed);
  train_cmd->add_flag("--supervised", supervised, "Train against the sources instead of the bank");
  train_cmd->add_option("--loss-csv", loss_csv);
  train_cmd->add_option("--bank-out", bank_dir, "Save the final bank here");
  train_cmd->add_option("--checkpoint-every", checkpoint_every);
  train_cmd->add_option("--checkpoint-dir", checkpoint_dir);
  train_cmd->add_option("--task", task_name, "Task of pairs outside task subdirectories");
  train_cmd->add_option("--niqe-model", niqe_path);

  std::string methods, pairs_dir;
  BenchProtocol protocol;
  auto* bench = app.add_subcommand("bench", "Time methods and write bench.csv / bench.json");
  bench->add_option("--methods", methods, "Comma-separated fuser ids and spec names")->required();
  bench->add_option("--size", protocol.image_size);
  bench->add_option("--trials", protocol.trials);
  bench->add_option("--skip", protocol.warmup_skip);
  bench->add_option("--out", out)->required();
  bench->add_option("--pairs", pairs_dir, "Evaluation pairs; synthetic pairs when omitted");
  bench->add_option("--niqe-model", niqe_path);

  int h = 400, w = 400, latency_trials = 0;
  auto* profile = app.add_subcommand("profile", "Parameter, FLOP and size report of a network");
  profile->set_help_flag("--help", "Print this help message and exit");
  profile->add_option("--spec", spec_name)->required();
  profile->add_option("--h", h);
  profile->add_option("--w", w);
  profile->add_option("--latency-trials", latency_trials, "Also time this many runs (first one skipped)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*fuse) {
      const ImagePair pair = load_pair(a, b, Task::ir_visible);
      if (!weights_path.empty()) {
        const NetParams<float> net = load_weights(weights_path);
        save_pgm(net_fuse(net, pair), out);
      } else {
        save_pgm(run_fuser(algo, pair).fused, out);
      }
    } else if (*eval) {
      const auto niqe = maybe_niqe(niqe_path);
      const ImagePair pair = load_pair(a, b, Task::ir_visible);
      std::cout << scores_json(score_fused(pair, load_pnm(fused), ptr(niqe))).dump(2) << "\n";
    } else if (*select) {
      const auto niqe = maybe_niqe(niqe_path);
      const ImagePair pair = load_pair(a, b, Task::ir_visible);
      std::vector<std::string> ids;
      std::stringstream ss(algos);
      for (std::string id; std::getline(ss, id, ',');)
        if (!id.empty()) ids.push_back(id);
      const auto scored = evaluate_candidates(pair, run_bank(pair, ids), ptr(niqe));
      const auto& best = select_optimal(scored);
      json j;
      j["selected"] = best.algo_id;
      for (const auto& c : scored) j["candidates"][c.algo_id] = scores_json(*c.scores);
      std::cout << j.dump(2) << "\n";
      if (!out.empty()) save_pgm(best.fused, out);
    } else if (*niqe_fit) {
      const auto images = load_corpus(corpus);
      save_niqe_model(fit_niqe_model(images), out);
      std::cout << "fitted NIQE model on " << images.size() << " images -> " << out << "\n";
    } else if (*train_cmd) {
      const auto niqe = maybe_niqe(niqe_path);
      const ArchSpec spec = resolve_spec(spec_name);
      const auto dataset = load_dataset(data_dir, parse_task(task_name));
      cfg.phases = {{lr1, epochs1}};
      if (epochs2 > 0) cfg.phases.push_back({lr2, epochs2});
      cfg.loss_kind = supervised ? LossKind::supervised : LossKind::to_optimal;
      cfg.checkpoint_every = checkpoint_every;
      cfg.checkpoint_dir = checkpoint_dir.empty() ? fs::path(out).parent_path() / "checkpoints" : fs::path(checkpoint_dir);
      EvolveResult res = rounds > 0 ? evolve(spec, dataset, cfg, rounds, ptr(niqe))
                                    : EvolveResult{{}, initial_bank(dataset, ptr(niqe)), {}, {}, {}};
      if (rounds == 0) {
        TrainResult tr = train(spec, dataset, res.bank, cfg);
        res.params = std::move(tr.params);
        res.curve = std::move(tr.curve);
      }
      save_weights(res.params, out);
      if (!loss_csv.empty()) save_loss_csv(res.curve, loss_csv);
      if (!bank_dir.empty()) save_bank(res.bank, bank_dir);
      std::cout << "trained '" << spec.name << "' on " << dataset.size() << " pairs, " << res.curve.size()
                << " epochs, final mean loss " << (res.curve.empty() ? 0.0 : res.curve.back().mean_loss) << "\n";
    } else if (*bench) {
      const auto niqe = maybe_niqe(niqe_path);
      std::vector<std::string> ids;
      std::stringstream ss(methods);
      for (std::string id; std::getline(ss, id, ',');)
        if (!id.empty()) ids.push_back(id);
      const auto pairs = pairs_dir.empty() ? synthetic_dataset(3, 64, 64, protocol.seed) : load_dataset(pairs_dir);
      const BenchReport rep = run_benchmark(ids, protocol, pairs, ptr(niqe));
      save_bench_report(rep, out);
      std::cout << format_bench_csv(rep);
    } else if (*profile) {
      const ArchSpec spec = resolve_spec(spec_name);
      CostReport r = profile_arch(spec, h, w);
      if (latency_trials > 0) {
        BenchProtocol p;
        p.image_size = h;
        p.trials = latency_trials;
        const NetParams<float> net = build_network<float>(spec, p.seed);
        if (h != w) throw DimensionError("latency timing uses square inputs");
        const CostReport t = time_method(spec.name, p, steady_clock_ms, &net);
        r.latency = t.latency;
        r.end_to_end = t.end_to_end;
      }
      std::cout << format_cost_report(r);
    }
  } catch (const UnknownAlgorithmError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
