#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mrnn/config.hpp"
#include "mrnn/dataset.hpp"
#include "mrnn/embeddings.hpp"
#include "mrnn/training.hpp"

namespace mrnn {

/// Loads (or synthesizes) every configured source and the idf table. When
/// no idf file is configured the table is computed over the dataset's
/// candidate documents.
inline Embedder build_embedder(const RunConfig& config, const Dataset& dataset) {
  std::vector<EmbeddingSource> sources;
  bool needs_idf = false;
  for (const auto& sc : config.embedding.sources) {
    EmbeddingSource src;
    src.spec = sc.spec;
    needs_idf = needs_idf || sc.spec.idf;
    if (sc.kind == "bundle") {
      src.bundle = EmbeddingBundle::load(sc.path);
    } else if (sc.kind == "static") {
      src.table = StaticTable::load(sc.path);
    } else {
      src.bundle = make_synthetic_bundle(dataset.texts(), sc.layers, sc.dim, sc.seed);
    }
    sources.push_back(std::move(src));
  }
  std::optional<IdfTable> idf;
  if (!config.embedding.idf_path.empty()) {
    idf = IdfTable::load(config.embedding.idf_path);
  } else if (needs_idf) {
    std::vector<std::vector<std::string>> corpus;
    std::set<std::string> seen;
    for (const auto& q : dataset.queries)
      for (const auto& c : q.candidates)
        if (seen.insert(c.doc_id).second) corpus.push_back(c.tokens);
    idf = compute_idf(corpus);
  }
  return Embedder(std::move(sources), config.embedding.ensemble_weights, config.embedding.ensemble_op,
                  std::move(idf));
}

namespace detail {

inline std::vector<std::string> truncated(const std::vector<std::string>& tokens, std::size_t limit) {
  return std::vector<std::string>(tokens.begin(), tokens.begin() + static_cast<long>(std::min(limit, tokens.size())));
}

}  // namespace detail

inline PreparedQuery prepare_query(const Query& q, const Embedder& embedder, const ModelConfig& model) {
  PreparedQuery p;
  p.id = q.query_id;
  p.query = embedder.embed_text(q.query_id, detail::truncated(q.tokens, model.max_query_length));
  for (const auto& c : q.candidates) {
    p.candidates.push_back(
        {c.doc_id, embedder.embed_text(c.doc_id, detail::truncated(c.tokens, model.max_doc_length)), c.label});
  }
  return p;
}

/// Embeds every query of a subset ("" = all) for training or evaluation.
inline std::vector<PreparedQuery> prepare_queries(const Dataset& dataset, const std::string& subset,
                                                  const Embedder& embedder, const ModelConfig& model) {
  std::vector<PreparedQuery> out;
  for (const Query* q : dataset.subset(subset)) out.push_back(prepare_query(*q, embedder, model));
  return out;
}

struct PreparedSplits {
  std::vector<PreparedQuery> train, valid, test;
  std::size_t input_dim = 0;
};

/// The seeded synthetic task embedded with a single-layer synthetic bundle of
/// width `dim`, as written by `mrnn synth`.
inline PreparedSplits prepare_synthetic(const SyntheticTask& task, std::size_t dim, const ModelConfig& model) {
  const Dataset ds = make_synthetic_dataset(task);
  EmbeddingSource src{{"synthetic", {1.0}, false, CombineOp::sum}, make_synthetic_bundle(ds.texts(), 1, dim, task.seed),
                      std::nullopt};
  const Embedder embedder({std::move(src)}, {1.0}, CombineOp::concat);
  return {prepare_queries(ds, "train", embedder, model), prepare_queries(ds, "valid", embedder, model),
          prepare_queries(ds, "test", embedder, model), embedder.dim()};
}

}  // namespace mrnn
