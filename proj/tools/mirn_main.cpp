// Command-line front end: ingest PTB-style WFDB corpora, train, run the
// 5-fold evaluation, and predict on stored datasets or single records.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mirn/dataset.hpp"
#include "mirn/eval.hpp"
#include "mirn/model.hpp"
#include "mirn/rng.hpp"
#include "mirn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// exit codes: 0 ok, 1 unexpected, 2 parse error, 3 config error, 4 empty data
constexpr int kExitOther = 1;
constexpr int kExitParse = 2;
constexpr int kExitConfig = 3;
constexpr int kExitEmpty = 4;

struct RunConfig {
  std::uint64_t seed = 0;
  int epochs = 20;
  int batch_size = 32;
  double lr = 0.001;
  std::string out_dir = ".";
  std::string config_file;

  mirn::TrainConfig train_config() const {
    mirn::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr = lr;
    return cfg;
  }

  json echo() const {
    return json{{"seed", seed},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", lr},
                {"out_dir", out_dir}};
  }
};

struct RunOptions {
  CLI::Option* seed = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* batch_size = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* out_dir = nullptr;
};

RunOptions add_run_options(CLI::App* cmd, RunConfig& cfg) {
  RunOptions opts;
  opts.seed = cmd->add_option("--seed", cfg.seed,
                              "master seed (init/shuffle/fold streams)");
  opts.epochs = cmd->add_option("--epochs", cfg.epochs, "training epochs")
                    ->check(CLI::PositiveNumber);
  opts.batch_size = cmd->add_option("--batch-size", cfg.batch_size,
                                    "minibatch size")
                        ->check(CLI::PositiveNumber);
  opts.lr = cmd->add_option("--lr", cfg.lr, "Adam learning rate")
                ->check(CLI::PositiveNumber);
  opts.out_dir = cmd->add_option("--out-dir", cfg.out_dir, "output directory");
  cmd->add_option("--config", cfg.config_file,
                  "key=value config file; command-line flags override it");
  return opts;
}

std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// key=value lines; a value from the file applies only when the matching flag
// was not given on the command line
void apply_config_file(RunConfig& cfg, const RunOptions& opts) {
  if (cfg.config_file.empty()) return;
  std::ifstream is(cfg.config_file);
  if (!is) throw mirn::ConfigError("cannot open config " + cfg.config_file);

  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string entry = trimmed(line);
    if (entry.empty() || entry[0] == '#') continue;
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) {
      throw mirn::ConfigError("config line " + std::to_string(line_no) +
                              ": expected key=value, got '" + entry + "'");
    }
    const std::string key = trimmed(entry.substr(0, eq));
    const std::string value = trimmed(entry.substr(eq + 1));
    try {
      if (key == "seed") {
        if (opts.seed->count() == 0) cfg.seed = std::stoull(value);
      } else if (key == "epochs") {
        if (opts.epochs->count() == 0) cfg.epochs = std::stoi(value);
      } else if (key == "batch-size") {
        if (opts.batch_size->count() == 0) cfg.batch_size = std::stoi(value);
      } else if (key == "lr") {
        if (opts.lr->count() == 0) cfg.lr = std::stod(value);
      } else if (key == "out-dir") {
        if (opts.out_dir->count() == 0) cfg.out_dir = value;
      } else {
        throw mirn::ConfigError("config line " + std::to_string(line_no) +
                                ": unknown key '" + key + "'");
      }
    } catch (const mirn::ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw mirn::ConfigError("config line " + std::to_string(line_no) +
                              ": cannot parse value '" + value + "' for '" +
                              key + "'");
    }
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.lr <= 0.0) {
    throw mirn::ConfigError("config values must be positive");
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw mirn::Error("cannot open " + path + " for writing");
  os << text;
  if (!os) throw mirn::Error("write failed: " + path);
}

json history_json(const mirn::FitHistory& history) {
  json epochs = json::array();
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const mirn::EpochStats& s = history.epochs[e];
    json entry{{"epoch", e + 1}, {"train_loss", s.train_loss}};
    if (std::isnan(s.val_accuracy)) {
      entry["val_accuracy"] = nullptr;
    } else {
      entry["val_accuracy"] = s.val_accuracy;
    }
    epochs.push_back(entry);
  }
  return epochs;
}

int cmd_ingest(const std::string& index_path, const std::string& out_path) {
  const mirn::IngestSummary summary = mirn::ingest_index(index_path);

  std::vector<mirn::LabeledSegment> segments;
  for (const mirn::EcgRecord& rec : summary.accepted) {
    auto segs = mirn::segment(rec);
    segments.insert(segments.end(), segs.begin(), segs.end());
  }

  std::map<std::string, int> reasons;
  for (const auto& [path, reason] : summary.rejected) reasons[reason] += 1;

  std::printf("accepted: %zu records, %zu segments\n", summary.accepted.size(),
              segments.size());
  std::printf("rejected: %zu records\n", summary.rejected.size());
  for (const auto& [reason, count] : reasons) {
    std::printf("  %d x %s\n", count, reason.c_str());
  }
  if (summary.accepted.empty()) {
    throw mirn::EmptyDataError("no records were accepted");
  }

  mirn::write_segments(out_path, segments);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_train(const std::string& dataset_path, const RunConfig& cfg) {
  const auto segments = mirn::read_segments(dataset_path);
  if (segments.empty()) throw mirn::EmptyDataError("dataset has no segments");

  // fold 0 of the seeded plan supplies the train/validation subjects
  const auto roster = mirn::subject_roster(segments);
  const mirn::SplitResult splits = mirn::make_splits(roster, 5, cfg.seed);
  const mirn::SplitPlan& plan = splits.folds[0];
  const auto train = mirn::select_subjects(segments, plan.train);
  const auto val = mirn::select_subjects(segments, plan.val);
  if (train.empty()) throw mirn::EmptyDataError("fold 0 has no training data");

  mirn::TrainConfig tc = cfg.train_config();
  tc.shuffle_seed = mirn::derive_seed(cfg.seed, mirn::seed_purpose::kShuffle, 0);
  mirn::ModelParams model =
      mirn::init_model(mirn::derive_seed(cfg.seed, mirn::seed_purpose::kInit, 0));

  const mirn::FitHistory history = mirn::fit(model, train, val, tc);
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    std::printf("epoch %zu/%d loss=%.6f val_acc=%.4f\n", e + 1, cfg.epochs,
                history.epochs[e].train_loss, history.epochs[e].val_accuracy);
  }

  fs::create_directories(cfg.out_dir);
  const std::string weights_path =
      (fs::path(cfg.out_dir) / "weights.mirn").string();
  mirn::save_weights(model, weights_path);

  json metrics{{"config", cfg.echo()},
               {"history", history_json(history)},
               {"train_segments", train.size()},
               {"val_segments", val.size()},
               {"weights", weights_path}};
  for (const std::string& w : splits.warnings) metrics["warnings"].push_back(w);
  const std::string metrics_path =
      (fs::path(cfg.out_dir) / "train_metrics.json").string();
  write_text(metrics_path, metrics.dump(2) + "\n");
  std::printf("wrote %s\nwrote %s\n", weights_path.c_str(),
              metrics_path.c_str());
  return 0;
}

int cmd_xval(const std::string& dataset_path, const RunConfig& cfg) {
  const auto segments = mirn::read_segments(dataset_path);
  if (segments.empty()) throw mirn::EmptyDataError("dataset has no segments");

  const mirn::CvResult cv =
      mirn::run_cross_validation(segments, cfg.train_config(), cfg.seed);

  fs::create_directories(cfg.out_dir);
  json folds = json::array();
  for (const mirn::FoldReport& fold : cv.folds) {
    std::printf("fold %d accuracy=%.4f (test segments: %zu)\n", fold.fold + 1,
                fold.accuracy, fold.test_segments);
    const std::string csv_path =
        (fs::path(cfg.out_dir) /
         ("fold_" + std::to_string(fold.fold + 1) + "_confusion.csv"))
            .string();
    write_text(csv_path, mirn::confusion_to_csv(fold.confusion));
    folds.push_back(json{{"fold", fold.fold + 1},
                         {"accuracy", fold.accuracy},
                         {"train_segments", fold.train_segments},
                         {"val_segments", fold.val_segments},
                         {"test_segments", fold.test_segments},
                         {"seed", fold.seed},
                         {"confusion_csv", csv_path}});
  }
  std::printf("mean accuracy %.4f +- %.4f (95%% CI)\n",
              cv.summary.mean_accuracy, cv.summary.ci95_half_width);

  json summary{{"folds", folds},
               {"mean_accuracy", cv.summary.mean_accuracy},
               {"ci95_half_width", cv.summary.ci95_half_width},
               {"seed", cv.summary.seed},
               {"config", cfg.echo()}};
  for (const std::string& w : cv.warnings) summary["warnings"].push_back(w);
  const std::string summary_path =
      (fs::path(cfg.out_dir) / "xval_summary.json").string();
  write_text(summary_path, summary.dump(2) + "\n");
  std::printf("wrote %s\n", summary_path.c_str());
  return 0;
}

int cmd_predict(const std::string& weights_path, const std::string& input) {
  const mirn::ModelParams model = mirn::load_weights(weights_path);

  std::vector<mirn::LabeledSegment> segments;
  if (input.size() > 5 && input.substr(input.size() - 5) == ".mids") {
    segments = mirn::read_segments(input);
  } else {
    const mirn::RecordOutcome out =
        mirn::load_record(input, /*require_label=*/false);
    if (!out.record) {
      throw mirn::EmptyDataError("record unusable: " + out.reject_reason);
    }
    segments = mirn::segment(*out.record);
  }
  if (segments.empty()) throw mirn::EmptyDataError("no segments to predict");

  std::printf("subject,segment,predicted");
  for (const std::string& name : mirn::class_names()) {
    std::printf(",p_%s", name.c_str());
  }
  std::printf("\n");

  std::map<std::string, int> seg_index;
  std::vector<std::size_t> order(segments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < segments.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, segments.size());
    const mirn::Tensor batch =
        mirn::make_batch(segments, order, begin, end, nullptr);
    const mirn::Tensor probs = mirn::forward(batch, model, mirn::Mode::kInfer);
    for (std::size_t b = 0; b < end - begin; ++b) {
      const mirn::LabeledSegment& seg = segments[begin + b];
      std::size_t arg = 0;
      for (std::size_t c = 1; c < mirn::kNumClasses; ++c) {
        if (probs(b, c) > probs(b, arg)) arg = c;
      }
      std::printf("%s,%d,%s", seg.subject_id.c_str(),
                  seg_index[seg.subject_id]++,
                  mirn::class_names()[arg].c_str());
      for (std::size_t c = 0; c < mirn::kNumClasses; ++c) {
        std::printf(",%.12f", probs(b, c));
      }
      std::printf("\n");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"myocardial infarction detection and localization from 12-lead ECG"};
  app.require_subcommand(1);

  std::string index_path, dataset_path, weights_path, input_path, out_path;
  RunConfig cfg;

  CLI::App* ingest =
      app.add_subcommand("ingest", "parse WFDB records into a dataset file");
  ingest->add_option("index", index_path, "index file listing record paths")
      ->required();
  ingest->add_option("output", out_path, "dataset file to write")->required();

  CLI::App* train = app.add_subcommand("train", "train on the fold-0 split");
  train->add_option("dataset", dataset_path, "dataset file")->required();
  const RunOptions train_opts = add_run_options(train, cfg);

  CLI::App* xval =
      app.add_subcommand("xval", "5-fold cross-validated training");
  xval->add_option("dataset", dataset_path, "dataset file")->required();
  const RunOptions xval_opts = add_run_options(xval, cfg);

  CLI::App* predict =
      app.add_subcommand("predict", "per-segment class probabilities as CSV");
  predict->add_option("weights", weights_path, "weight file")->required();
  predict->add_option("input", input_path, "dataset file or WFDB record path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(index_path, out_path);
    if (*train) {
      apply_config_file(cfg, train_opts);
      return cmd_train(dataset_path, cfg);
    }
    if (*xval) {
      apply_config_file(cfg, xval_opts);
      return cmd_xval(dataset_path, cfg);
    }
    if (*predict) return cmd_predict(weights_path, input_path);
  } catch (const mirn::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitParse;
  } catch (const mirn::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const mirn::EmptyDataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitEmpty;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitOther;
  }
  return 0;
}
