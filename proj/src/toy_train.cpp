#include "dgattn/toy_train.hpp"

#include <cmath>
#include <sstream>

#include "dgattn/model.hpp"

namespace dgattn {

namespace {

constexpr std::size_t kInChannels = 3;
constexpr std::size_t kWidth = 16;
constexpr std::size_t kClasses = 2;
constexpr std::size_t kBlocks = 2;
constexpr double kEps = 1e-5;

struct ToyModel {
  Tensor embed_w, embed_b;
  std::vector<BlockParams> blocks;
  std::vector<HeadCentroids> centroids;
  Tensor norm_g, norm_b;
  Tensor head_w, head_b;
};

struct Sample {
  Tensor image;  // S x S x 3
  std::size_t label;
};

DgAttentionConfig toy_attention(double lr) {
  DgAttentionConfig cfg;
  cfg.heads = 2;
  cfg.head_dim = kWidth / 2;
  cfg.groups = 4;
  cfg.top_k = 32;
  cfg.tau = resolve_tau(TauRule::Complement, cfg.tau, lr);
  return cfg;
}

// Class sign times a fixed pattern, plus noise: separable by the mean of a
// single linear feature.
std::vector<Sample> make_dataset(Rng& rng, std::size_t count, std::size_t size) {
  const Tensor pattern = rng.normal_tensor({size, size, kInChannels});
  std::vector<Sample> data;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % 2;
    Tensor img = rng.normal_tensor({size, size, kInChannels}, 0.5);
    const double sign = label ? 1.0 : -1.0;
    for (std::size_t e = 0; e < img.size(); ++e) img[e] += sign * pattern[e];
    data.push_back({std::move(img), label});
  }
  return data;
}

ToyModel make_model(Rng& rng, const DgAttentionConfig& attn) {
  ToyModel m;
  m.embed_w = rng.normal_tensor({kInChannels, kWidth}, 1.0 / std::sqrt(double(kInChannels)));
  m.embed_b = Tensor({kWidth});
  for (std::size_t b = 0; b < kBlocks; ++b) {
    m.blocks.push_back(BlockParams::init(kWidth, 4, rng));
    m.centroids.push_back(init_head_centroids(attn, rng));
  }
  m.norm_g = Tensor({kWidth}, 1.0);
  m.norm_b = Tensor({kWidth});
  m.head_w = rng.normal_tensor({kWidth, kClasses}, 1.0 / std::sqrt(double(kWidth)));
  m.head_b = Tensor({kClasses});
  return m;
}

struct Trace {
  Tensor tokens;  // embed input, L x 3
  std::vector<BlockCache> blocks;
  LayerNormCache norm;
  Tensor pooled;  // 1 x C
  Tensor probs;   // 1 x classes
};

double forward(const ToyModel& m, const Sample& s, const DgAttentionConfig& attn, Trace& tr) {
  const std::size_t S = s.image.dim(0), L = S * S;
  tr.tokens = s.image.reshaped({L, kInChannels});
  Tensor x = linear(tr.tokens, m.embed_w, m.embed_b).reshaped({S, S, kWidth});
  tr.blocks.assign(kBlocks, {});
  for (std::size_t b = 0; b < kBlocks; ++b) {
    HeadCentroids c = m.centroids[b];
    x = block_forward(x, m.blocks[b], BlockAttention{attn, false}, &c, kEps, &tr.blocks[b]);
  }
  const Tensor normed = layer_norm(x.reshaped({L, kWidth}), m.norm_g, m.norm_b, kEps, &tr.norm);
  tr.pooled = Tensor({1, kWidth});
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t c = 0; c < kWidth; ++c) tr.pooled.at(0, c) += normed.at(i, c) / double(L);
  tr.probs = softmax_rows(linear(tr.pooled, m.head_w, m.head_b), 1.0);
  return -std::log(tr.probs[s.label]);
}

void backward(const ToyModel& m, const Sample& s, const Trace& tr, double weight, ToyModel& g) {
  const std::size_t S = s.image.dim(0), L = S * S;
  Tensor dlogits = tr.probs;
  dlogits[s.label] -= 1.0;
  dlogits = weight * dlogits;
  const LinearGrads gh = linear_backward(tr.pooled, m.head_w, dlogits);
  g.head_w += gh.dw;
  g.head_b += gh.db;
  Tensor dnormed({L, kWidth});
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t c = 0; c < kWidth; ++c) dnormed.at(i, c) = gh.dx.at(0, c) / double(L);
  Tensor dx = layer_norm_backward(tr.norm, m.norm_g, dnormed).dx.reshaped({S, S, kWidth});
  for (std::size_t b = kBlocks; b-- > 0;) dx = block_backward(tr.blocks[b], m.blocks[b], dx, g.blocks[b]);
  const LinearGrads ge = linear_backward(tr.tokens, m.embed_w, dx.reshaped({L, kWidth}));
  g.embed_w += ge.dw;
  g.embed_b += ge.db;
}

ToyModel zero_grads(const ToyModel& m) {
  ToyModel g;
  g.embed_w = Tensor(m.embed_w.shape());
  g.embed_b = Tensor(m.embed_b.shape());
  for (const auto& b : m.blocks) g.blocks.push_back(BlockParams::zeros_like(b));
  g.head_w = Tensor(m.head_w.shape());
  g.head_b = Tensor(m.head_b.shape());
  return g;
}

void sgd(Tensor& w, const Tensor& g, double lr) {
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
}

// Projection and FFN weights, embedding, and head. CPE and LayerNorm
// parameters stay at their initial values.
void apply_update(ToyModel& m, const ToyModel& g, double lr) {
  sgd(m.embed_w, g.embed_w, lr);
  sgd(m.embed_b, g.embed_b, lr);
  sgd(m.head_w, g.head_w, lr);
  sgd(m.head_b, g.head_b, lr);
  for (std::size_t b = 0; b < kBlocks; ++b) {
    BlockParams& p = m.blocks[b];
    const BlockParams& d = g.blocks[b];
    for (auto [w, dw] : {std::pair{&p.qkv_w, &d.qkv_w}, {&p.qkv_b, &d.qkv_b}, {&p.proj_w, &d.proj_w},
                         {&p.proj_b, &d.proj_b}, {&p.ffn_w1, &d.ffn_w1}, {&p.ffn_b1, &d.ffn_b1},
                         {&p.ffn_dw, &d.ffn_dw}, {&p.ffn_dw_b, &d.ffn_dw_b}, {&p.ffn_w2, &d.ffn_w2},
                         {&p.ffn_b2, &d.ffn_b2}})
      sgd(*w, *dw, lr);
  }
}

// One EMA step per block and head over the queries of the whole batch.
void update_all_centroids(ToyModel& m, const std::vector<Trace>& traces, double tau) {
  for (std::size_t b = 0; b < kBlocks; ++b)
    for (std::size_t h = 0; h < m.centroids[b].size(); ++h) {
      std::vector<double> rows;
      std::vector<std::size_t> groups;
      for (const auto& tr : traces) {
        const HeadCache& hc = tr.blocks[b].attn.heads[h];
        rows.insert(rows.end(), hc.q_sorted.storage().begin(), hc.q_sorted.storage().end());
        for (std::size_t j = 0; j < hc.layout.groups(); ++j)
          groups.insert(groups.end(), hc.layout.assign.sizes[j], j);
      }
      const std::size_t n = groups.size(), width = rows.size() / n;
      const Tensor q({n, width}, std::move(rows));
      Centroids c = m.centroids[b][h];
      c.tau = tau;
      m.centroids[b][h] = update_centroids(c, q, make_assignment(std::move(groups), c.groups()));
    }
}

}  // namespace

std::string ToyTrainResult::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss\n";
  for (std::size_t s = 0; s < loss.size(); ++s) os << s << ',' << loss[s] << '\n';
  return os.str();
}

ToyTrainResult run_toy_train(const ToyTrainOptions& opts) {
  Rng rng(opts.seed);
  const DgAttentionConfig attn = toy_attention(opts.learning_rate);
  const std::vector<Sample> data = make_dataset(rng, opts.samples, opts.image_size);
  ToyModel model = make_model(rng, attn);

  ToyTrainResult result;
  const double weight = 1.0 / static_cast<double>(data.size());
  for (std::size_t step = 0; step <= opts.steps; ++step) {
    std::vector<Trace> traces(data.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) loss += weight * forward(model, data[i], attn, traces[i]);
    result.loss.push_back(loss);
    if (!std::isfinite(loss)) {
      result.diverged = true;
      break;
    }
    if (step == opts.steps) break;

    ToyModel grads = zero_grads(model);
    for (std::size_t i = 0; i < data.size(); ++i) backward(model, data[i], traces[i], weight, grads);
    apply_update(model, grads, opts.learning_rate);
    update_all_centroids(model, traces, attn.tau);
  }
  return result;
}

}  // namespace dgattn
