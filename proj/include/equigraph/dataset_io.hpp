#pragma once

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "equigraph/graph.hpp"

namespace equigraph {

// Dataset directory layout: metadata.json plus one sample_NNNNN.json per graph.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                         const nlohmann::json& extra_metadata = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["n_v"] = ds.meta.n_v;
  meta["n_e"] = ds.meta.n_e;
  meta["n_x"] = ds.meta.n_x;
  meta["n_a"] = ds.meta.n_a;
  meta["n_u"] = ds.meta.n_u;
  meta["num_classes"] = ds.meta.num_classes;
  meta["provenance"] = ds.meta.provenance;
  meta["num_samples"] = ds.samples.size();
  if (!extra_metadata.is_null()) meta["generation"] = extra_metadata;
  std::ofstream(dir / "metadata.json") << meta.dump(2) << "\n";
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.json", i);
    std::ofstream(dir / name) << write_graph_json(ds.samples[i]).dump() << "\n";
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "metadata.json");
  if (!mf) throw ParseError("missing metadata.json in " + dir.string());
  nlohmann::json meta = nlohmann::json::parse(mf);
  Dataset ds;
  ds.meta.n_v = meta.value("n_v", 0);
  ds.meta.n_e = meta.value("n_e", 0);
  ds.meta.n_x = meta.value("n_x", 0);
  ds.meta.n_a = meta.value("n_a", 0);
  ds.meta.n_u = meta.value("n_u", 0);
  ds.meta.num_classes = meta.value("num_classes", 0);
  ds.meta.provenance = meta.value("provenance", "");
  std::size_t n = meta.at("num_samples");
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.json", i);
    std::ifstream sf(dir / name);
    if (!sf) throw ParseError("missing sample file " + (dir / name).string());
    ds.samples.push_back(read_graph_json(nlohmann::json::parse(sf)));
  }
  return ds;
}

}  // namespace equigraph
