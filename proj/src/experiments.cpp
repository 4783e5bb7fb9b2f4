#include "semtok/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "semtok/checkpoint.hpp"
#include "semtok/error.hpp"
#include "semtok/gradcheck.hpp"

namespace semtok {

namespace fs = std::filesystem;

// --- argument helpers ---------------------------------------------------------

namespace {

double parse_number(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v))
    throw UsageError("not a number: '" + std::string(text) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

std::vector<double> parse_grid(std::string_view text) {
  if (text.empty()) return {};
  if (text.find(':') != std::string_view::npos) {
    const auto parts = split(text, ':');
    if (parts.size() != 3) throw UsageError("range must be start:stop:step, got '" + std::string(text) + "'");
    const double a = parse_number(parts[0]), b = parse_number(parts[1]), s = parse_number(parts[2]);
    if (!(s > 0.0)) throw UsageError("range step must be positive");
    if (b < a) throw UsageError("range stop is below start");
    const auto count = static_cast<std::size_t>(std::floor((b - a) / s + 1e-9)) + 1;
    std::vector<double> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(std::round((a + s * i) * 1e9) / 1e9);
    return out;
  }
  std::vector<double> out;
  for (auto p : split(text, ',')) out.push_back(parse_number(p));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  if (text.empty()) return out;
  for (auto p : split(text, ',')) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(p.data(), p.data() + p.size(), v);
    if (ec != std::errc() || end != p.data() + p.size())
      throw UsageError("not a seed: '" + std::string(p) + "'");
    out.push_back(v);
  }
  return out;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("SEMTOK_THREADS")) {
    std::size_t v = 0;
    const std::string_view s(env);
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && end == s.data() + s.size() && v >= 1) return v;
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  threads = std::min(std::max<std::size_t>(threads, 1), count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// --- train --------------------------------------------------------------------

namespace {

ExperimentConfig config_or_default(const std::optional<fs::path>& path) {
  return path ? load_config(*path) : ExperimentConfig{};
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

TrainSummary cmd_train(const TrainOptions& options, std::ostream& log) {
  ExperimentConfig cfg = config_or_default(options.config);
  if (options.penalty) cfg.model.penalty = *options.penalty;
  if (options.lambda) {
    if (!(*options.lambda >= 0.0)) throw UsageError("--lambda must be >= 0");
    cfg.model.lambda = *options.lambda;
  }
  if (options.epochs) {
    if (*options.epochs == 0) throw UsageError("--epochs must be >= 1");
    cfg.train.epochs = *options.epochs;
  }
  if (options.seed) cfg.train.seed = *options.seed;
  if (options.channel) cfg.train.channel = *options.channel;
  if (options.no_score_scaling) cfg.model.score_scaling = false;
  cfg.model.validate();
  cfg.train.validate();
  cfg.train.checkpoint_path = options.out.string();

  TrainSummary summary;
  summary.checkpoint = options.out;
  summary.metrics = options.metrics ? *options.metrics : fs::path(options.out).replace_extension(".csv");

  const Dataset train_data = load_train_split(cfg.data, cfg.model);
  const Dataset test_data = load_test_split(cfg.data, cfg.model);
  Model model(cfg.model, cfg.train.seed);

  if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
  std::ofstream csv = open_output(summary.metrics);
  csv << train_csv_header();

  double epoch_loss = 0.0, epoch_acc = 0.0, epoch_cost = 0.0;
  std::size_t epoch_batches = 0;
  TrainHooks hooks;
  hooks.on_batch = [&](const BatchLog& b) {
    csv << train_csv_row(b);
    ++summary.rows;
    epoch_loss += b.task_loss;
    epoch_acc += b.accuracy;
    epoch_cost += b.mean_cost;
    ++epoch_batches;
  };
  hooks.on_epoch = [&](std::size_t epoch, const Model&) {
    csv.flush();
    if (options.progress && epoch_batches > 0) {
      const double k = static_cast<double>(epoch_batches);
      char line[160];
      std::snprintf(line, sizeof line, "epoch %zu/%zu  task_loss %.4f  train_acc %.3f  mean_T %.3f\n",
                    epoch + 1, cfg.train.epochs, epoch_loss / k, epoch_acc / k, epoch_cost / k);
      log << line << std::flush;
    }
    epoch_loss = epoch_acc = epoch_cost = 0.0;
    epoch_batches = 0;
  };
  train(model, train_data, cfg.train, hooks);
  if (!csv) throw IoError("short write to " + summary.metrics.string());

  summary.test = evaluate(model, test_data, 1.0, ChannelSpec::ideal());
  if (options.progress) {
    char line[160];
    std::snprintf(line, sizeof line, "test accuracy at alpha=1: %.3f (%zu images)\n",
                  summary.test.accuracy, summary.test.samples);
    log << line;
  }
  return summary;
}

// --- sweep --------------------------------------------------------------------

std::string sweep_csv_header() {
  return "# semtok-sweep v1\n"
         "alpha,channel,snr_db,drop_prob,seeds,samples,accuracy_mean,accuracy_std,"
         "mean_T_mean,mean_T_std,mean_flops_mean,mean_flops_std,kept_fraction_mean,"
         "kept_fraction_std\n";
}

std::string sweep_csv_row(const SweepRow& r) {
  std::ostringstream os;
  os << std::setprecision(10) << r.alpha << ',' << to_string(r.channel) << ',';
  if (r.channel == ChannelKind::awgn) os << r.snr_db;
  os << ',';
  if (r.channel == ChannelKind::drop) os << r.drop_prob;
  os << ',' << r.seeds << ',' << r.samples << ',' << r.accuracy_mean << ',' << r.accuracy_std
     << ',' << r.cost_mean << ',' << r.cost_std << ',' << r.flops_mean << ',' << r.flops_std << ','
     << r.kept_mean << ',' << r.kept_std << '\n';
  return os.str();
}

namespace {

// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

std::vector<SweepRow> cmd_sweep(const SweepOptions& options, std::ostream& log) {
  if (options.budgets.empty()) throw UsageError("sweep: no budgets given");
  if (options.seeds.empty()) throw UsageError("sweep: no seeds given");
  for (double a : options.budgets)
    if (!(a >= 0.0 && a <= 1.0)) throw UsageError("sweep: budgets must lie in [0,1]");
  for (double p : options.drop_probs)
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("sweep: drop probabilities must lie in [0,1]");

  std::vector<ChannelSpec> channels;
  if (options.snrs.empty() && options.drop_probs.empty()) channels.push_back(ChannelSpec::ideal());
  for (double snr : options.snrs) {
    ChannelSpec c = ChannelSpec::awgn(snr);
    c.noise_mode = options.noise_mode;
    c.drop_class_token = options.drop_class_token;
    channels.push_back(c);
  }
  for (double p : options.drop_probs) {
    ChannelSpec c = ChannelSpec::drop(p);
    c.drop_class_token = options.drop_class_token;
    channels.push_back(c);
  }

  const Model model = load_checkpoint(options.checkpoint);
  ExperimentConfig cfg = config_or_default(options.config);
  const Dataset test = load_test_split(cfg.data, model.config());
  const std::size_t samples = options.samples ? std::min(options.samples, test.size()) : test.size();

  struct Task {
    std::size_t row;
    double alpha;
    ChannelSpec channel;
  };
  std::vector<SweepRow> rows;
  std::vector<std::vector<EvalMetrics>> results;
  std::vector<Task> tasks;
  for (double alpha : options.budgets)
    for (const auto& ch : channels) {
      SweepRow r;
      r.alpha = alpha;
      r.channel = ch.kind;
      r.snr_db = ch.snr_db;
      r.drop_prob = ch.drop_prob;
      r.seeds = options.seeds.size();
      r.samples = samples;
      // The ideal channel ignores its seed: one evaluation stands for all.
      const std::size_t runs = ch.kind == ChannelKind::ideal ? 1 : options.seeds.size();
      for (std::size_t s = 0; s < runs; ++s)
        tasks.push_back({rows.size(), alpha, ch.with_seed(options.seeds[s])});
      rows.push_back(r);
      results.emplace_back();
    }

  std::vector<EvalMetrics> task_results(tasks.size());
  const std::size_t threads = options.threads ? options.threads : worker_threads();
  log << "sweep: " << rows.size() << " cells, " << tasks.size() << " evaluations of " << samples
      << " images on " << std::min(threads, tasks.size()) << " thread(s)\n";
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    task_results[i] = evaluate(model, test, tasks[i].alpha, tasks[i].channel, samples);
  });
  for (std::size_t i = 0; i < tasks.size(); ++i) results[tasks[i].row].push_back(task_results[i]);

  std::ofstream csv = open_output(options.out);
  csv << sweep_csv_header();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& r = rows[k];
    auto res = results[k];
    if (res.size() == 1 && r.seeds > 1) res.assign(r.seeds, res.front());
    auto collect = [&](auto field) {
      std::vector<double> v;
      for (const auto& m : res) v.push_back(field(m));
      return mean_std(v);
    };
    std::tie(r.accuracy_mean, r.accuracy_std) = collect([](const EvalMetrics& m) { return m.accuracy; });
    std::tie(r.cost_mean, r.cost_std) = collect([](const EvalMetrics& m) { return m.mean_cost; });
    std::tie(r.flops_mean, r.flops_std) = collect([](const EvalMetrics& m) { return m.mean_flops; });
    std::tie(r.kept_mean, r.kept_std) = collect([](const EvalMetrics& m) { return m.kept_fraction; });
    csv << sweep_csv_row(r);
  }
  if (!csv) throw IoError("short write to " + options.out.string());
  return rows;
}

// --- visualize ------------------------------------------------------------------

std::string mask_csv_header() {
  return "# semtok-masks v1\n"
         "sample,layer,alpha,kept_count,mask\n";
}

std::string mask_file_name(std::size_t sample, std::size_t layer, double alpha) {
  char name[96];
  std::snprintf(name, sizeof name, "mask_s%zu_l%zu_a%.2f.pgm", sample, layer, alpha);
  return name;
}

std::vector<MaskRecord> cmd_visualize(const VisualizeOptions& options, std::ostream& log) {
  const Model model = load_checkpoint(options.checkpoint);
  const ModelConfig& mc = model.config();
  ExperimentConfig cfg = config_or_default(options.config);
  const Dataset test = load_test_split(cfg.data, mc);
  if (options.sample >= test.size())
    throw UsageError("sample " + std::to_string(options.sample) + " out of range (test split has " +
                     std::to_string(test.size()) + " images)");
  std::vector<std::size_t> layers = options.layers;
  if (layers.empty())
    for (std::size_t k = 0; k < mc.selection_layers(); ++k) layers.push_back(k);
  for (std::size_t k : layers)
    if (k >= mc.selection_layers())
      throw UsageError("layer " + std::to_string(k) + " out of range (model has " +
                       std::to_string(mc.selection_layers()) + " selection layers)");
  if (options.budgets.empty()) throw UsageError("visualize: no budgets given");

  const Tensor image = test.image(options.sample);
  const std::size_t g = mc.grid(), p = mc.patch_size, S = mc.image_size;
  std::vector<unsigned char> patch_mean(g * g);
  {
    const auto px = image.data();
    for (std::size_t gy = 0; gy < g; ++gy)
      for (std::size_t gx = 0; gx < g; ++gx) {
        double s = 0.0;
        for (std::size_t c = 0; c < mc.channels; ++c)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x) s += px[c * S * S + (gy * p + y) * S + gx * p + x];
        s /= static_cast<double>(mc.channels * p * p);
        patch_mean[gy * g + gx] = static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0));
      }
  }

  fs::create_directories(options.out_dir);
  {
    Pgm src{S, S, {}};
    const auto px = image.data();
    for (std::size_t i = 0; i < S * S; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < mc.channels; ++c) s += px[c * S * S + i];
      src.pixels.push_back(static_cast<unsigned char>(std::lround(s / mc.channels * 255.0)));
    }
    write_pgm(options.out_dir / ("source_s" + std::to_string(options.sample) + ".pgm"), src);
  }

  std::vector<MaskRecord> records;
  NoGradGuard no_grad;
  for (double alpha : options.budgets) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("budgets must lie in [0,1]");
    const ForwardResult res = forward(model, image, alpha, options.channel);
    for (std::size_t k : layers) {
      MaskRecord rec;
      rec.layer = k;
      rec.alpha = alpha;
      rec.kept = res.selection.layers[k].kept;
      rec.image = options.out_dir / mask_file_name(options.sample, k, alpha);
      Pgm pgm{g, g, std::vector<unsigned char>(g * g, 0)};
      for (std::size_t i = 0; i < g * g; ++i)
        if (rec.kept[i]) pgm.pixels[i] = patch_mean[i];
      write_pgm(rec.image, pgm);
      records.push_back(std::move(rec));
    }
  }

  const fs::path csv_path = options.out_dir / ("masks_s" + std::to_string(options.sample) + ".csv");
  std::ofstream csv = open_output(csv_path);
  csv << mask_csv_header();
  for (const auto& r : records) {
    std::size_t kept = 0;
    std::string mask;
    for (bool b : r.kept) {
      kept += b;
      mask.push_back(b ? '1' : '0');
    }
    char alpha[32];
    std::snprintf(alpha, sizeof alpha, "%.2f", r.alpha);
    csv << options.sample << ',' << r.layer << ',' << alpha << ',' << kept << ',' << mask << '\n';
  }
  if (!csv) throw IoError("short write to " + csv_path.string());
  log << "wrote " << records.size() << " masks to " << options.out_dir.string() << '\n';
  return records;
}

// --- gradcheck / gen-data ---------------------------------------------------------

bool cmd_gradcheck(const GradcheckCommandOptions& options, std::ostream& out) {
  struct FaultReset {
    ~FaultReset() { debug::clear_backward_fault(); }
  } reset;
  if (options.inject_fault) {
    const auto& ops = differentiable_ops();
    if (std::find(ops.begin(), ops.end(), *options.inject_fault) == ops.end())
      throw UsageError("unknown op '" + *options.inject_fault + "'");
    debug::inject_backward_fault(*options.inject_fault);
    out << "injected backward fault into " << *options.inject_fault << '\n';
  }
  GradcheckOptions go;
  go.seed = options.seed;
  const GradcheckReport report = run_gradcheck(go);
  report.print(out);
  return report.passed();
}

GenDataFiles cmd_gen_data(const GenDataOptions& options, std::ostream& log) {
  ExperimentConfig cfg = config_or_default(options.config);
  if (options.n) cfg.data.train_size = *options.n;
  if (options.test_n) cfg.data.test_size = *options.test_n;
  if (options.seed) cfg.data.seed = *options.seed;
  if (cfg.data.train_size == 0) throw UsageError("--n must be >= 1");
  if (cfg.model.channels != 1) throw UsageError("gen-data writes single-channel images only");
  cfg.data.train_images = cfg.data.train_labels = cfg.data.test_images = cfg.data.test_labels = "";

  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());
  GenDataFiles files{options.out_dir / "train-images.idx3-ubyte",
                     options.out_dir / "train-labels.idx1-ubyte",
                     options.out_dir / "test-images.idx3-ubyte",
                     options.out_dir / "test-labels.idx1-ubyte"};
  save_idx(load_train_split(cfg.data, cfg.model), files.train_images, files.train_labels);
  log << "wrote " << cfg.data.train_size << " training images to " << files.train_images.string() << '\n';
  if (cfg.data.test_size > 0) {
    save_idx(load_test_split(cfg.data, cfg.model), files.test_images, files.test_labels);
    log << "wrote " << cfg.data.test_size << " test images to " << files.test_images.string() << '\n';
  }
  return files;
}

// --- PGM ------------------------------------------------------------------------

void write_pgm(const fs::path& path, const Pgm& image) {
  if (image.pixels.size() != image.width * image.height)
    throw ContractError("write_pgm: pixel count does not match dimensions");
  std::ofstream out = open_output(path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Pgm read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  Pgm img;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || magic != "P5" || maxval != 255) throw FormatError(path.string() + ": not an 8-bit P5 PGM");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw FormatError(path.string() + ": truncated PGM");
  return img;
}

}  // namespace semtok
