// semtok: train, sweep, visualize, gradcheck and gen-data front end.
//
// Exit codes: 0 success, 1 check failure or runtime error, 2 usage error,
// 3 I/O or format error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "semtok/error.hpp"
#include "semtok/experiments.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct ChannelFlags {
  std::string kind = "ideal";
  double snr = 20.0;
  double drop_prob = 0.0;
  std::uint64_t seed = 0;
  std::string noise_mode = "exact";
  bool drop_class_token = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--channel", kind, "ideal | awgn | drop");
    cmd->add_option("--snr", snr, "AWGN signal-to-noise ratio in dB");
    cmd->add_option("--drop-prob", drop_prob, "packet drop probability");
    cmd->add_option("--channel-seed", seed, "channel noise / loss seed");
    cmd->add_option("--noise-mode", noise_mode, "exact | fixed-sigma");
    cmd->add_flag("--drop-class-token", drop_class_token, "let the class token be dropped too");
  }

  semtok::ChannelSpec spec() const {
    semtok::ChannelSpec c;
    c.kind = semtok::parse_channel_kind(kind);
    c.snr_db = snr;
    c.drop_prob = drop_prob;
    c.seed = seed;
    c.noise_mode = semtok::parse_noise_mode(noise_mode);
    c.drop_class_token = drop_class_token;
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget-conditioned token selection for transformer semantic communication"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint + metrics CSV");
  semtok::TrainOptions topt;
  std::string config_path, penalty, out = "model.stkc", metrics;
  double lambda = 0.0;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  ChannelFlags train_channel;
  bool quiet = false;
  train->add_option("--config", config_path, "JSON config file");
  auto* penalty_opt = train->add_option("--penalty", penalty, "global | local");
  auto* lambda_opt = train->add_option("--lambda", lambda, "penalty weight");
  auto* epochs_opt = train->add_option("--epochs", epochs, "training epochs");
  auto* seed_opt = train->add_option("--seed", seed, "training seed");
  train->add_option("--out", out, "checkpoint path");
  train->add_option("--metrics", metrics, "metrics CSV (default: <out>.csv)");
  train->add_flag("--no-score-scaling", topt.no_score_scaling, "do not scale kept tokens by their score");
  train->add_flag("--quiet", quiet, "no progress output");
  train_channel.add(train);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "evaluate one checkpoint over budgets and channels");
  semtok::SweepOptions sopt;
  std::string sweep_ckpt, sweep_config, budgets, snrs, drops, seeds = "0,1,2,3,4",
                                                                  sweep_out = "sweep.csv",
                                                                  sweep_noise = "exact";
  sweep->add_option("checkpoint", sweep_ckpt, "checkpoint file")->required();
  sweep->add_option("--config", sweep_config, "JSON config (test data settings)");
  sweep->add_option("--budgets", budgets, "a:b:s or comma list")->required();
  sweep->add_option("--snrs", snrs, "AWGN SNRs in dB, a:b:s or list");
  sweep->add_option("--drop-probs", drops, "drop probabilities, a:b:s or list");
  sweep->add_option("--seeds", seeds, "channel seeds (comma list)");
  sweep->add_option("--noise-mode", sweep_noise, "exact | fixed-sigma");
  sweep->add_flag("--drop-class-token", sopt.drop_class_token, "let the class token be dropped too");
  sweep->add_option("--samples", sopt.samples, "limit on test images (0 = all)");
  sweep->add_option("--out", sweep_out, "output CSV");

  // visualize
  auto* vis = app.add_subcommand("visualize", "write per-layer kept-token masks as PGM + CSV");
  semtok::VisualizeOptions vopt;
  std::string vis_ckpt, vis_config, vis_budgets, vis_out = "masks";
  ChannelFlags vis_channel;
  vis->add_option("checkpoint", vis_ckpt, "checkpoint file")->required();
  vis->add_option("--config", vis_config, "JSON config (test data settings)");
  vis->add_option("--sample", vopt.sample, "test image index");
  vis->add_option("--layers", vopt.layers, "selection layer indices (default all)")->delimiter(',');
  vis->add_option("--budgets", vis_budgets, "a:b:s or list (default 0.3,0.5,0.7,1.0)");
  vis->add_option("--out", vis_out, "output directory");
  vis_channel.add(vis);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  semtok::GradcheckCommandOptions gopt;
  std::string fault;
  gc->add_option("--inject-fault", fault, "corrupt the backward rule of this op");
  gc->add_option("--seed", gopt.seed, "probe seed");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write the shapes dataset as IDX files");
  semtok::GenDataOptions dopt;
  std::string gen_config, gen_out = "data";
  std::size_t gen_n = 0, gen_test_n = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "JSON config (data settings)");
  auto* gen_n_opt = gen->add_option("--n", gen_n, "training images");
  auto* gen_test_opt = gen->add_option("--test-n", gen_test_n, "test images");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "data seed");
  gen->add_option("--out", gen_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) {
      if (!config_path.empty()) topt.config = config_path;
      if (*penalty_opt) topt.penalty = semtok::parse_penalty_kind(penalty);
      if (*lambda_opt) topt.lambda = lambda;
      if (*epochs_opt) topt.epochs = epochs;
      if (*seed_opt) topt.seed = seed;
      if (train->count("--channel") || train->count("--snr") || train->count("--drop-prob") ||
          train->count("--channel-seed") || train->count("--noise-mode") ||
          train->count("--drop-class-token"))
        topt.channel = train_channel.spec();
      topt.out = out;
      if (!metrics.empty()) topt.metrics = metrics;
      topt.progress = !quiet;
      const auto summary = semtok::cmd_train(topt, std::cerr);
      std::cout << "checkpoint " << summary.checkpoint.string() << "\nmetrics " << summary.metrics.string()
                << " (" << summary.rows << " rows)\n";
    } else if (*sweep) {
      sopt.checkpoint = sweep_ckpt;
      if (!sweep_config.empty()) sopt.config = sweep_config;
      sopt.budgets = semtok::parse_grid(budgets);
      sopt.snrs = semtok::parse_grid(snrs);
      sopt.drop_probs = semtok::parse_grid(drops);
      sopt.seeds = semtok::parse_seed_list(seeds);
      sopt.noise_mode = semtok::parse_noise_mode(sweep_noise);
      sopt.out = sweep_out;
      const auto rows = semtok::cmd_sweep(sopt, std::cerr);
      std::cout << "wrote " << rows.size() << " rows to " << sopt.out.string() << '\n';
    } else if (*vis) {
      vopt.checkpoint = vis_ckpt;
      if (!vis_config.empty()) vopt.config = vis_config;
      if (!vis_budgets.empty()) vopt.budgets = semtok::parse_grid(vis_budgets);
      vopt.channel = vis_channel.spec();
      vopt.out_dir = vis_out;
      semtok::cmd_visualize(vopt, std::cout);
    } else if (*gc) {
      if (!fault.empty()) gopt.inject_fault = fault;
      return semtok::cmd_gradcheck(gopt, std::cout) ? 0 : kExitFailure;
    } else if (*gen) {
      if (!gen_config.empty()) dopt.config = gen_config;
      if (*gen_n_opt) dopt.n = gen_n;
      if (*gen_test_opt) dopt.test_n = gen_test_n;
      if (*gen_seed_opt) dopt.seed = gen_seed;
      dopt.out_dir = gen_out;
      semtok::cmd_gen_data(dopt, std::cout);
    }
  } catch (const semtok::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const semtok::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const semtok::ContractError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const semtok::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const semtok::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const semtok::ConsistencyError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
