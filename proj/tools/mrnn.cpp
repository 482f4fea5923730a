// mrnn command-line tool: ingest datasets, train, evaluate, rank, export
// attention heatmaps and run gradient checks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mrnn/mrnn.hpp"

namespace fs = std::filesystem;
using namespace mrnn;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "Run configuration file");
  if (config_required) c->required();
  cmd->add_option("--seed", o.seed, "Override the training seed");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
  cmd->add_option("--out", o.out, "Output directory");
}

RunConfig load_config(const CommonOptions& o) {
  RunConfig c = RunConfig::load(o.config);
  if (o.seed) c.training.seed = *o.seed;
  return c;
}

fs::path out_dir(const CommonOptions& o, const RunConfig& c) {
  if (!o.out.empty()) return o.out;
  if (!c.paths.out.empty()) return c.paths.out;
  return ".";
}

// --checkpoint, then [paths] checkpoint, then model.ckpt in the output directory.
fs::path checkpoint_path(const CommonOptions& o, const RunConfig& c) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  if (!c.paths.checkpoint.empty()) return c.paths.checkpoint;
  return out_dir(o, c) / "model.ckpt";
}

Dataset load_dataset(const RunConfig& c) {
  if (c.paths.dataset.empty()) throw ConfigError("no dataset path in [paths]");
  return read_dataset(c.paths.dataset);
}

Checkpoint load_model(const CommonOptions& o, const RunConfig& c, const Embedder& embedder) {
  Checkpoint ck = load_checkpoint(checkpoint_path(o, c));
  if (ck.model.input_dim != embedder.dim()) {
    throw ConfigError("checkpoint expects input width " + std::to_string(ck.model.input_dim) +
                      " but the embedding config produces " + std::to_string(embedder.dim()));
  }
  return ck;
}

int run_ingest(const std::string& input, const std::string& format, const std::string& subset,
               const std::string& output) {
  IngestStats stats;
  const Dataset ds = ingest(input, format, subset, &stats);
  write_dataset(ds, output);
  std::cout << "ingest " << input << " (" << format << "): " << stats.queries_seen << " queries, dropped "
            << stats.dropped_no_positive << " without positives and " << stats.dropped_no_negative
            << " without negatives, kept " << stats.queries_kept << " -> " << output << "\n";
  return 0;
}

int run_synth(const std::string& out, SyntheticTask task, std::size_t dim) {
  const fs::path dir(out);
  fs::create_directories(dir);
  const Dataset ds = make_synthetic_dataset(task);
  write_dataset(ds, dir / "dataset.jsonl");
  make_synthetic_bundle(ds.texts(), 1, dim, task.seed).save(dir / "bundle");
  std::ofstream conf(dir / "mrnn.conf");
  conf << "# Synthetic key-phrase retrieval task.\n"
          "preset = desk\n\n"
          "[model]\nblocks = 2\nwindow = 3\nfeatures = 32\npool_width = 1\n\n"
          "[training]\nlearning_rate = 1e-3\nweight_decay = 1e-3\nbatch_size = 32\nmargin = 0.5\n"
          "epochs = 10\npatience = 10\nseed = 7\n\n"
          "[embedding]\nweights = 1\nop = concat\n\n"
          "[source.synthetic]\nkind = bundle\npath = bundle\nlayer_weights = 1\nmix = sum\nidf = false\n\n"
          "[paths]\ndataset = dataset.jsonl\ncheckpoint = run/model.ckpt\nout = run\n";
  std::cout << "synthetic task: " << ds.queries.size() << " queries -> " << dir.string() << "\n";
  return 0;
}

int run_train(const CommonOptions& o) {
  const RunConfig config = load_config(o);
  const Dataset ds = load_dataset(config);
  const Embedder embedder = build_embedder(config, ds);
  std::cout << "mrnn train " << config.to_json().dump() << "\n";
  std::cout << "learning_rate=" << config.training.learning_rate << " batch_size=" << config.training.batch_size
            << " weight_decay=" << config.training.weight_decay << " margin=" << config.training.margin
            << " blocks=" << config.model.blocks << " window=" << config.model.window
            << " features=" << config.model.features << " input_dim=" << embedder.dim() << "\n";

  const auto train_set = prepare_queries(ds, "train", embedder, config.model);
  const auto valid_set = prepare_queries(ds, "valid", embedder, config.model);
  const fs::path dir = out_dir(o, config);
  fs::create_directories(dir);
  std::ofstream csv(dir / "metrics.csv");
  csv << "epoch,loss,recall@1,seconds\n";
  TrainResult result = train(train_set, valid_set, config.model, config.training, embedder.dim(),
                             [&](const EpochLog& row) {
                               csv << row.epoch << ',' << std::setprecision(17) << row.loss << ','
                                   << row.recall_at_1 << ',' << std::setprecision(6) << row.seconds << '\n';
                               csv.flush();
                               std::cout << "epoch " << row.epoch << " loss " << row.loss << " recall@1 "
                                         << row.recall_at_1 << " (" << row.seconds << " s)\n";
                             });
  if (result.skipped_queries) std::cout << "skipped " << result.skipped_queries << " unminable queries\n";
  result.checkpoint.run_config = config.to_json();
  const fs::path ckpt = checkpoint_path(o, config);
  save_checkpoint(result.checkpoint, ckpt);
  std::cout << "checkpoint -> " << ckpt.string() << "\n";
  return 0;
}

int run_evaluate(const CommonOptions& o, const std::string& subset) {
  const RunConfig config = load_config(o);
  const Dataset ds = load_dataset(config);
  const Embedder embedder = build_embedder(config, ds);
  const Checkpoint ck = load_model(o, config, embedder);
  const auto queries = prepare_queries(ds, subset, embedder, ck.model.config);
  const auto lists = rank_queries(ck.model, queries);
  nlohmann::json report = evaluation_report(lists);
  report["subset"] = subset;
  const fs::path dir = out_dir(o, config);
  fs::create_directories(dir);
  std::ofstream(dir / "evaluation.json") << report.dump(2) << '\n';
  std::cout << report["metrics"].dump() << " excluded=" << report["excluded"] << "\n";
  return 0;
}

int run_rank(const CommonOptions& o, const std::string& subset) {
  const RunConfig config = load_config(o);
  const Dataset ds = load_dataset(config);
  const Embedder embedder = build_embedder(config, ds);
  const Checkpoint ck = load_model(o, config, embedder);
  const auto queries = prepare_queries(ds, subset, embedder, ck.model.config);
  const auto lists = rank_queries(ck.model, queries);
  const fs::path dir = out_dir(o, config);
  fs::create_directories(dir);
  std::ofstream os(dir / "rankings.jsonl");
  for (const auto& l : lists) {
    nlohmann::json ranking = nlohmann::json::array();
    for (const auto& c : l.ranked) ranking.push_back({{"doc_id", c.doc_id}, {"dist", c.dist}, {"label", c.label}});
    os << nlohmann::json{{"query_id", l.query_id}, {"ranking", ranking}}.dump() << '\n';
  }
  std::cout << "ranked " << lists.size() << " queries -> " << (dir / "rankings.jsonl").string() << "\n";
  return 0;
}

int run_export(const CommonOptions& o, const std::string& query_id, const std::string& doc_id) {
  const RunConfig config = load_config(o);
  const Dataset ds = load_dataset(config);
  const Embedder embedder = build_embedder(config, ds);
  const Checkpoint ck = load_model(o, config, embedder);
  const Query* query = nullptr;
  for (const auto& q : ds.queries)
    if (q.query_id == query_id) query = &q;
  if (!query) throw DataError("unknown query id '" + query_id + "'");
  const Candidate* doc = nullptr;
  for (const auto& c : query->candidates)
    if (c.doc_id == doc_id) doc = &c;
  if (!doc) throw DataError("query '" + query_id + "' has no candidate '" + doc_id + "'");

  const auto qtok = detail::truncated(query->tokens, ck.model.config.max_query_length);
  const auto dtok = detail::truncated(doc->tokens, ck.model.config.max_doc_length);
  const PairScore score =
      forward_pair(ck.model, embedder.embed_text(query->query_id, qtok), embedder.embed_text(doc->doc_id, dtok));
  const fs::path dir = out_dir(o, config);
  for (const auto& p : export_attention(score.trace, qtok, dtok, ck.model.config, dir)) {
    std::cout << p.string() << "\n";
  }
  std::cout << "dist " << score.dist << "\n";
  return 0;
}

int run_gradcheck(const CommonOptions& o, std::size_t hq, std::size_t hd, std::size_t width, double tolerance) {
  ModelConfig model;
  model.blocks = 2;
  model.window = 3;
  model.features = 8;
  std::uint64_t seed = 1;
  fs::path dir;
  if (!o.config.empty()) {
    const RunConfig config = load_config(o);
    model = config.model;
    seed = config.training.seed;
    dir = out_dir(o, config);
  } else if (!o.out.empty()) {
    dir = o.out;
  }
  if (o.seed) seed = *o.seed;
  const MrnnModel m = MrnnModel::init(model, width, seed);
  std::mt19937_64 rng(seed + 1);
  const Array q = random_tokens(hq, width, rng);
  const Array d = random_tokens(hd, width, rng);
  const GradReport report = check_model_gradients(m, q, d);
  nlohmann::json j{{"step", report.step},
                   {"rel_floor", report.rel_floor},
                   {"tolerance", tolerance},
                   {"max_rel_error", report.max_rel_error()},
                   {"max_abs_error", report.max_abs_error()},
                   {"passed", report.passed(tolerance)}};
  for (const auto& p : report.parameters) {
    j["parameters"].push_back(
        {{"name", p.name}, {"size", p.size}, {"max_abs_error", p.max_abs_error}, {"max_rel_error", p.max_rel_error}});
    std::cout << std::left << std::setw(26) << p.name << " abs " << std::scientific << std::setprecision(3)
              << p.max_abs_error << " rel " << p.max_rel_error << std::defaultfloat << "\n";
  }
  if (!dir.empty()) {
    fs::create_directories(dir);
    std::ofstream(dir / "gradcheck.json") << j.dump(2) << '\n';
  }
  std::cout << (report.passed(tolerance) ? "PASS" : "FAIL") << " max relative error " << report.max_rel_error()
            << " (tolerance " << tolerance << ")\n";
  return report.passed(tolerance) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-resolution neural ranking with duplex attention"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* ingest_cmd = app.add_subcommand("ingest", "Convert a raw dataset into canonical JSONL");
  std::string input, format = "jsonl", subset_name, output;
  ingest_cmd->add_option("--input", input, "Raw dataset file")->required();
  ingest_cmd->add_option("--format", format, "jsonl | wikiqa | trecqa");
  ingest_cmd->add_option("--subset", subset_name, "Subset tag (train, valid, test)");
  ingest_cmd->add_option("--output", output, "Canonical JSONL output")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Write the seeded synthetic retrieval task");
  SyntheticTask task;
  std::size_t synth_dim = 32;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--seed", task.seed, "Generator seed");
  synth_cmd->add_option("--train", task.train, "Training queries");
  synth_cmd->add_option("--valid", task.valid, "Validation queries");
  synth_cmd->add_option("--test", task.test, "Test queries");
  synth_cmd->add_option("--dim", synth_dim, "Embedding width");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, common, true);

  std::string eval_subset = "test";
  auto* eval_cmd = app.add_subcommand("evaluate", "Compute recall@k, MRR and MAP");
  add_common(eval_cmd, common, true);
  eval_cmd->add_option("--subset", eval_subset, "Subset to evaluate");

  auto* rank_cmd = app.add_subcommand("rank", "Write per-query ranked candidate lists");
  add_common(rank_cmd, common, true);
  rank_cmd->add_option("--subset", eval_subset, "Subset to rank");

  std::string query_id, doc_id;
  auto* export_cmd = app.add_subcommand("export-attention", "Write attention heatmaps for one pair");
  add_common(export_cmd, common, true);
  export_cmd->add_option("--query", query_id, "Query id")->required();
  export_cmd->add_option("--doc", doc_id, "Document id")->required();

  std::size_t hq = 4, hd = 6, width = 6;
  double tolerance = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full network");
  add_common(grad_cmd, common, false);
  grad_cmd->add_option("--hq", hq, "Query length");
  grad_cmd->add_option("--hd", hd, "Document length");
  grad_cmd->add_option("--width", width, "Embedding width");
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest_cmd) return run_ingest(input, format, subset_name, output);
    if (*synth_cmd) return run_synth(synth_out, task, synth_dim);
    if (*train_cmd) return run_train(common);
    if (*eval_cmd) return run_evaluate(common, eval_subset);
    if (*rank_cmd) return run_rank(common, eval_subset);
    if (*export_cmd) return run_export(common, query_id, doc_id);
    if (*grad_cmd) return run_gradcheck(common, hq, hd, width, tolerance);
  } catch (const mrnn::Error& e) {
    std::cerr << "mrnn: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mrnn: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
