#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "equigraph/geometry.hpp"
#include "equigraph/graph.hpp"
#include "equigraph/nn.hpp"

namespace equigraph {

enum class BlockKind { gn, dgn, agn, combined };
enum class Aggregation { sum, mean };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::gn: return "gn";
    case BlockKind::dgn: return "dgn";
    case BlockKind::agn: return "agn";
    case BlockKind::combined: return "combined";
  }
  return "?";
}

inline BlockKind block_kind_from_string(const std::string& s) {
  if (s == "gn") return BlockKind::gn;
  if (s == "dgn") return BlockKind::dgn;
  if (s == "agn") return BlockKind::agn;
  if (s == "combined") return BlockKind::combined;
  throw ConfigError("unknown block kind: " + s);
}

struct BlockConfig {
  BlockKind kind = BlockKind::gn;
  Aggregation rho = Aggregation::sum;  // applied uniformly to every aggregation
  int hidden = 64;
  int out_e = 32, out_v = 32, out_a = 32, out_u = 32;
  PsiChoice psi;
};

struct ReadoutConfig {
  std::vector<int> node_hidden = {64};
  Aggregation pooling = Aggregation::sum;
  std::vector<int> head_hidden = {64};
  int num_classes = 0;
};

struct ModelConfig {
  std::vector<BlockConfig> blocks;
  bool scaling_layer = false;  // SDGN: scale-normalise input coordinates
  double alpha_scale = 1.0;
  ReadoutConfig readout;
  std::uint64_t seed = 0;
  double dropout = 0.0;

  static ModelConfig standard(BlockKind kind, Aggregation rho, int num_classes,
                              PsiChoice psi = {}, bool scaling = false) {
    ModelConfig cfg;
    int layers = (kind == BlockKind::agn || kind == BlockKind::combined) ? 2 : 3;
    for (int l = 0; l < layers; ++l) {
      BlockConfig b;
      b.kind = kind;
      b.rho = rho;
      b.psi = psi;
      cfg.blocks.push_back(b);
    }
    cfg.scaling_layer = scaling;
    cfg.readout.pooling = rho;
    cfg.readout.num_classes = num_classes;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization of model configs
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : cfg.blocks) {
    j["blocks"].push_back(
        {{"kind", to_string(b.kind)},
         {"rho", b.rho == Aggregation::sum ? "sum" : "mean"},
         {"hidden", b.hidden},
         {"out_e", b.out_e},
         {"out_v", b.out_v},
         {"out_a", b.out_a},
         {"out_u", b.out_u},
         {"psi",
          {{"kind", b.psi.kind == PsiKind::identity ? "identity"
                                                    : "weighted-neighbour-difference"},
           {"weight_inputs", b.psi.weight_inputs == PsiWeightInputs::edge_only
                                 ? "edge_only"
                                 : "edge_nodes_global"}}}});
  }
  j["scaling_layer"] = cfg.scaling_layer;
  j["alpha_scale"] = cfg.alpha_scale;
  j["readout"] = {{"node_hidden", cfg.readout.node_hidden},
                  {"pooling", cfg.readout.pooling == Aggregation::sum ? "sum" : "mean"},
                  {"head_hidden", cfg.readout.head_hidden},
                  {"num_classes", cfg.readout.num_classes}};
  j["seed"] = cfg.seed;
  j["dropout"] = cfg.dropout;
  return j;
}

inline Aggregation agg_from_string(const std::string& s) {
  if (s == "sum") return Aggregation::sum;
  if (s == "mean") return Aggregation::mean;
  throw ConfigError("unknown aggregation: " + s);
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  for (const auto& bj : j.at("blocks")) {
    BlockConfig b;
    b.kind = block_kind_from_string(bj.at("kind"));
    b.rho = agg_from_string(bj.at("rho"));
    b.hidden = bj.value("hidden", 64);
    b.out_e = bj.value("out_e", 32);
    b.out_v = bj.value("out_v", 32);
    b.out_a = bj.value("out_a", 32);
    b.out_u = bj.value("out_u", 32);
    if (bj.contains("psi")) {
      std::string pk = bj.at("psi").value("kind", "identity");
      b.psi.kind = pk == "identity" ? PsiKind::identity : PsiKind::weighted_neighbour_difference;
      std::string wi = bj.at("psi").value("weight_inputs", "edge_nodes_global");
      b.psi.weight_inputs = wi == "edge_only" ? PsiWeightInputs::edge_only
                                              : PsiWeightInputs::edge_nodes_global;
    }
    cfg.blocks.push_back(b);
  }
  cfg.scaling_layer = j.value("scaling_layer", false);
  cfg.alpha_scale = j.value("alpha_scale", 1.0);
  if (j.contains("readout")) {
    const auto& r = j.at("readout");
    cfg.readout.node_hidden = r.value("node_hidden", std::vector<int>{64});
    cfg.readout.pooling = agg_from_string(r.value("pooling", "sum"));
    cfg.readout.head_hidden = r.value("head_hidden", std::vector<int>{64});
    cfg.readout.num_classes = r.at("num_classes");
  }
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.dropout = j.value("dropout", 0.0);
  return cfg;
}

// Scale-normalised coordinates: gamma = alpha / max edge length.
inline Tensor scaling_layer(const Tensor& coords, const std::vector<Edge>& edges,
                            double alpha_scale) {
  if (edges.empty()) throw DegenerateGeometryError("scaling layer requires at least one edge");
  double max_d2 = 0;
  for (const auto& e : edges) max_d2 = std::max(max_d2, squared_distance(coords, e.src, e.dst));
  if (max_d2 <= 0) throw DegenerateGeometryError("scaling layer: all edge endpoints coincide");
  double gamma = alpha_scale / std::sqrt(max_d2);
  Tensor out = coords;
  out.data = std::make_shared<std::vector<double>>(*coords.data);
  for (auto& v : *out.data) v *= gamma;
  return out;
}

// Graph-network model: a stack of GN/DGN/AGN/combined blocks followed by a
// node MLP, global pooling and a classifier head.
class Model {
 public:
  Model(ModelConfig cfg, DatasetMeta meta) : cfg_(std::move(cfg)), meta_(meta) {
    Rng rng = make_rng(cfg_.seed, "model-init");
    // The plain GN baseline receives coordinates stacked into node features.
    bool gn_only = true;
    for (const auto& b : cfg_.blocks) gn_only = gn_only && b.kind == BlockKind::gn;
    coords_as_features_ = gn_only;

    int n_v = meta.n_v + (coords_as_features_ ? meta.n_x : 0);
    int n_e = meta.n_e;
    int n_a = meta.n_a;
    int n_u = meta.n_u;
    for (std::size_t l = 0; l < cfg_.blocks.size(); ++l) {
      const auto& b = cfg_.blocks[l];
      BlockParams bp;
      std::string pre = "block" + std::to_string(l);
      switch (b.kind) {
        case BlockKind::gn:
          bp.phi_e = Mlp(store_, pre + ".phi_e", {2 * n_v + n_e + n_u, b.hidden, b.out_e},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_v = Mlp(store_, pre + ".phi_v", {n_v + b.out_e + n_u, b.hidden, b.out_v},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_u = Mlp(store_, pre + ".phi_u", {b.out_v + b.out_e + n_u, b.hidden, b.out_u},
                         rng, Activation::swish, cfg_.dropout);
          break;
        case BlockKind::dgn:
          bp.phi_e = Mlp(store_, pre + ".phi_e", {n_e + 2 * n_v + 1 + n_u, b.hidden, b.out_e},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_v = Mlp(store_, pre + ".phi_v", {b.out_e + n_v + n_u, b.hidden, b.out_v},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_u = Mlp(store_, pre + ".phi_u", {b.out_e + b.out_v + 1 + n_u, b.hidden, b.out_u},
                         rng, Activation::swish, cfg_.dropout);
          break;
        case BlockKind::agn:
          bp.phi_a = Mlp(store_, pre + ".phi_a", {3 * n_v + n_a + 1 + n_u, b.hidden, b.out_a},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_e = Mlp(store_, pre + ".phi_e", {2 * n_v + n_e + n_u, b.hidden, b.out_e},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_v = Mlp(store_, pre + ".phi_v", {n_v + b.out_e + b.out_a + n_u, b.hidden, b.out_v},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_u = Mlp(store_, pre + ".phi_u", {b.out_v + b.out_e + b.out_a + n_u, b.hidden, b.out_u},
                         rng, Activation::swish, cfg_.dropout);
          break;
        case BlockKind::combined:
          bp.phi_a = Mlp(store_, pre + ".phi_a", {3 * n_v + n_a + 1 + n_u, b.hidden, b.out_a},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_e = Mlp(store_, pre + ".phi_e", {2 * n_v + n_e + 1 + n_u, b.hidden, b.out_e},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_v = Mlp(store_, pre + ".phi_v", {n_v + b.out_e + b.out_a + n_u, b.hidden, b.out_v},
                         rng, Activation::swish, cfg_.dropout);
          bp.phi_u = Mlp(store_, pre + ".phi_u", {b.out_v + b.out_e + n_u, b.hidden, b.out_u},
                         rng, Activation::swish, cfg_.dropout);
          break;
      }
      if (b.kind != BlockKind::gn && b.psi.kind == PsiKind::weighted_neighbour_difference) {
        int in = b.psi.weight_inputs == PsiWeightInputs::edge_only
                     ? b.out_e
                     : b.out_e + 2 * b.out_v + n_u;
        bp.phi_x = Mlp(store_, pre + ".phi_x", {in, b.hidden, 1}, rng,
                       Activation::swish, cfg_.dropout);
      }
      blocks_.push_back(bp);
      n_e = b.out_e;
      n_v = b.out_v;
      n_a = b.out_a;
      n_u = b.out_u;
    }
    std::vector<int> node_widths = {n_v};
    for (int w : cfg_.readout.node_hidden) node_widths.push_back(w);
    node_widths.push_back(node_widths.back());  // node MLP output width = last hidden
    node_mlp_ = Mlp(store_, "readout.node", node_widths, rng, Activation::swish, cfg_.dropout);
    std::vector<int> head_widths = {node_widths.back()};
    for (int w : cfg_.readout.head_hidden) head_widths.push_back(w);
    head_widths.push_back(cfg_.readout.num_classes);
    head_mlp_ = Mlp(store_, "readout.head", head_widths, rng, Activation::swish, cfg_.dropout);
  }

  struct ForwardOutputs {
    Tensor logits;       // 1 x C
    Tensor node_embeds;  // N x n_v (final)
    Tensor coords;       // N x n_x (after psi updates)
    Tensor global;       // 1 x n_u (final)
  };

  ForwardOutputs forward(const GraphSample& g, bool training = false) {
    int n = g.num_nodes();
    std::vector<int> src, dst;
    for (const auto& e : g.edges) {
      src.push_back(e.src);
      dst.push_back(e.dst);
    }
    std::vector<int> aj, ai, ak;
    for (const auto& a : g.angles) {
      aj.push_back(a.j);
      ai.push_back(a.i);
      ak.push_back(a.k);
    }

    Tensor x = g.coords;
    if (cfg_.scaling_layer) x = scaling_layer(x, g.edges, cfg_.alpha_scale);
    Tensor v = coords_as_features_
                   ? concat_cols({g.node_features, x})
                   : g.node_features;
    if (v.cols == 0) v = Tensor(n, 0);
    Tensor e = g.edge_features;
    Tensor a = g.angle_features;
    Tensor u = g.global;
    std::uint64_t dropout_counter = 0;
    std::uint64_t dropout_seed = derive_seed(cfg_.seed, "dropout");

    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const BlockConfig& bc = cfg_.blocks[l];
      BlockParams& bp = blocks_[l];
      bool mean = bc.rho == Aggregation::mean;
      auto run = [&](const Mlp& mlp, const Tensor& in) {
        return mlp.forward(store_, in, training, dropout_seed, &dropout_counter);
      };
      Tensor u_edge = repeat_row(u, static_cast<int>(src.size()));
      Tensor u_node = repeat_row(u, n);

      switch (bc.kind) {
        case BlockKind::gn: {
          Tensor e_in = concat_cols({gather_rows(v, src), gather_rows(v, dst), e, u_edge});
          Tensor e_new = run(bp.phi_e, e_in);
          Tensor agg_ev = scatter_rows(e_new, dst, n, mean);
          Tensor v_new = run(bp.phi_v, concat_cols({v, agg_ev, u_node}));
          Tensor u_new = run(bp.phi_u, concat_cols({reduce_rows(v_new, mean),
                                                    reduce_rows(e_new, mean), u}));
          e = e_new;
          v = v_new;
          u = u_new;
          break;
        }
        case BlockKind::dgn: {
          Tensor d2 = rowwise_sum(square(sub(gather_rows(x, dst), gather_rows(x, src))));
          Tensor e_in = concat_cols({e, gather_rows(v, dst), gather_rows(v, src), d2, u_edge});
          Tensor e_new = run(bp.phi_e, e_in);
          Tensor agg_ev = scatter_rows(e_new, dst, n, mean);
          Tensor v_new = run(bp.phi_v, concat_cols({agg_ev, v, u_node}));
          Tensor x_new = apply_psi(bc, bp, x, src, dst, e_new, v_new, u, training,
                                   dropout_seed, &dropout_counter);
          Tensor d2_new =
              rowwise_sum(square(sub(gather_rows(x_new, dst), gather_rows(x_new, src))));
          Tensor u_new = run(bp.phi_u, concat_cols({reduce_rows(e_new, mean),
                                                    reduce_rows(v_new, mean),
                                                    reduce_rows(d2_new, mean), u}));
          e = e_new;
          v = v_new;
          x = x_new;
          u = u_new;
          break;
        }
        case BlockKind::agn:
        case BlockKind::combined: {
          Tensor ang = angles_tensor(x, aj, ai, ak);
          Tensor u_ang = repeat_row(u, static_cast<int>(aj.size()));
          Tensor a_in = concat_cols({gather_rows(v, ai), gather_rows(v, aj),
                                     gather_rows(v, ak), a, ang, u_ang});
          Tensor a_new = run(bp.phi_a, a_in);
          Tensor e_in;
          if (bc.kind == BlockKind::agn) {
            // AGN edge updates see no geometric input.
            e_in = concat_cols({gather_rows(v, src), gather_rows(v, dst), e, u_edge});
          } else {
            Tensor d2 = rowwise_sum(square(sub(gather_rows(x, dst), gather_rows(x, src))));
            e_in = concat_cols({gather_rows(v, src), gather_rows(v, dst), e, d2, u_edge});
          }
          Tensor e_new = run(bp.phi_e, e_in);
          Tensor agg_ev = scatter_rows(e_new, dst, n, mean);
          Tensor agg_av = scatter_rows(a_new, ai, n, mean);
          Tensor v_new = run(bp.phi_v, concat_cols({v, agg_ev, agg_av, u_node}));
          Tensor x_new = apply_psi(bc, bp, x, src, dst, e_new, v_new, u, training,
                                   dropout_seed, &dropout_counter);
          Tensor u_new;
          if (bc.kind == BlockKind::agn) {
            u_new = run(bp.phi_u, concat_cols({reduce_rows(v_new, mean),
                                               reduce_rows(e_new, mean),
                                               reduce_rows(a_new, mean), u}));
          } else {
            u_new = run(bp.phi_u, concat_cols({reduce_rows(v_new, mean),
                                               reduce_rows(e_new, mean), u}));
          }
          a = a_new;
          e = e_new;
          v = v_new;
          x = x_new;
          u = u_new;
          break;
        }
      }
    }

    Tensor pooled_in = node_mlp_.forward(store_, v, training, dropout_seed, &dropout_counter);
    Tensor pooled = reduce_rows(pooled_in, cfg_.readout.pooling == Aggregation::mean);
    Tensor logits = head_mlp_.forward(store_, pooled, training, dropout_seed, &dropout_counter);
    return {logits, v, x, u};
  }

  ParameterStore& params() { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const DatasetMeta& meta() const { return meta_; }

 private:
  struct BlockParams {
    Mlp phi_e, phi_v, phi_u, phi_a, phi_x;
  };

  Tensor angles_tensor(const Tensor& x, const std::vector<int>& aj,
                       const std::vector<int>& ai, const std::vector<int>& ak) {
    Tensor ra = sub(gather_rows(x, aj), gather_rows(x, ai));
    Tensor rb = sub(gather_rows(x, ak), gather_rows(x, ai));
    Tensor na = sqrt_op(rowwise_sum(square(ra)));
    Tensor nb = sqrt_op(rowwise_sum(square(rb)));
    for (int i = 0; i < na.rows; ++i) {
      if (na.at(i, 0) <= kRayDegeneracyThreshold || nb.at(i, 0) <= kRayDegeneracyThreshold)
        throw DegenerateGeometryError(
            "degenerate ray in angle (" + std::to_string(aj[i]) + "," +
            std::to_string(ai[i]) + "," + std::to_string(ak[i]) + ")");
    }
    Tensor cosv = div(rowwise_sum(mul(ra, rb)), mul(na, nb));
    return acos_clamped(cosv);
  }

  Tensor apply_psi(const BlockConfig& bc, BlockParams& bp, const Tensor& x,
                   const std::vector<int>& src, const std::vector<int>& dst,
                   const Tensor& e_new, const Tensor& v_new, const Tensor& u,
                   bool training, std::uint64_t dropout_seed, std::uint64_t* counter) {
    if (bc.psi.kind == PsiKind::identity) return x;
    Tensor w_in;
    if (bc.psi.weight_inputs == PsiWeightInputs::edge_only) {
      w_in = e_new;
    } else {
      w_in = concat_cols({e_new, gather_rows(v_new, src), gather_rows(v_new, dst),
                          repeat_row(u, static_cast<int>(src.size()))});
    }
    Tensor weights = bp.phi_x.forward(store_, w_in, training, dropout_seed, counter);
    std::vector<Edge> edges(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) edges[i] = {src[i], dst[i]};
    return psi_weighted_apply(x, edges, weights);
  }

  ModelConfig cfg_;
  DatasetMeta meta_;
  ParameterStore store_;
  std::vector<BlockParams> blocks_;
  Mlp node_mlp_, head_mlp_;
  bool coords_as_features_ = false;
};

}  // namespace equigraph
