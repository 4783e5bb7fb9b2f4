#pragma once

// Command implementations behind the semtok CLI. Each takes a plain options
// struct so tests can drive them without a process boundary.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "semtok/budget.hpp"
#include "semtok/channel.hpp"
#include "semtok/config.hpp"

namespace semtok {

// "a:b:s" (inclusive of b up to rounding) or "x,y,z". Throws UsageError.
std::vector<double> parse_grid(std::string_view text);
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

// Worker count: SEMTOK_THREADS when set (>= 1), else hardware concurrency.
std::size_t worker_threads();

// Runs fn(i) for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::optional<PenaltyKind> penalty;
  std::optional<double> lambda;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<ChannelSpec> channel;  // replaces the configured training channel
  bool no_score_scaling = false;
  std::filesystem::path out = "model.stkc";
  // Defaults to `out` with a .csv extension.
  std::optional<std::filesystem::path> metrics;
  bool progress = true;
};

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::size_t rows = 0;
  EvalMetrics test;  // at alpha = 1 on the ideal channel
};

TrainSummary cmd_train(const TrainOptions& options, std::ostream& log);

struct SweepOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> config;  // data settings for the test split
  std::vector<double> budgets;
  std::vector<double> snrs;        // AWGN cells
  std::vector<double> drop_probs;  // packet-drop cells
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  NoiseMode noise_mode = NoiseMode::exact;
  bool drop_class_token = false;
  std::size_t samples = 0;  // 0 = whole test split
  std::filesystem::path out = "sweep.csv";
  std::size_t threads = 0;  // 0 = worker_threads()
};

struct SweepRow {
  double alpha = 0.0;
  ChannelKind channel = ChannelKind::ideal;
  double snr_db = 0.0;
  double drop_prob = 0.0;
  std::size_t seeds = 0;
  std::size_t samples = 0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double cost_mean = 0.0, cost_std = 0.0;
  double flops_mean = 0.0, flops_std = 0.0;
  double kept_mean = 0.0, kept_std = 0.0;
};

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

// Rows in grid order: budgets outermost, then ideal / AWGN / drop cells.
// Throws UsageError on an empty grid.
std::vector<SweepRow> cmd_sweep(const SweepOptions& options, std::ostream& log);

struct VisualizeOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> config;
  std::size_t sample = 0;
  std::vector<std::size_t> layers;  // selection layer indices; empty = all
  std::vector<double> budgets{0.3, 0.5, 0.7, 1.0};
  ChannelSpec channel;
  std::filesystem::path out_dir = "masks";
};

struct MaskRecord {
  std::size_t layer = 0;
  double alpha = 0.0;
  std::vector<bool> kept;  // per patch, row-major over the patch grid
  std::filesystem::path image;
};

std::string mask_csv_header();
std::string mask_file_name(std::size_t sample, std::size_t layer, double alpha);

// Writes one PGM per (layer, alpha) and masks_s<sample>.csv into out_dir.
std::vector<MaskRecord> cmd_visualize(const VisualizeOptions& options, std::ostream& log);

struct GradcheckCommandOptions {
  std::optional<std::string> inject_fault;
  std::uint64_t seed = 0;
};

// Prints the report; returns true when every check passed.
bool cmd_gradcheck(const GradcheckCommandOptions& options, std::ostream& out);

struct GenDataOptions {
  std::filesystem::path out_dir = "data";
  std::optional<std::filesystem::path> config;
  std::optional<std::size_t> n;       // training images
  std::optional<std::size_t> test_n;  // test images
  std::optional<std::uint64_t> seed;
};

struct GenDataFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

GenDataFiles cmd_gen_data(const GenDataOptions& options, std::ostream& log);

// Reads a binary (P5) PGM; used by tests and handy for inspection.
struct Pgm {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> pixels;
};
Pgm read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Pgm& image);

}  // namespace semtok
