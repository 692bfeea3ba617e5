#include "gtnp/attnproc.hpp"

#include <cmath>

namespace gtnp {

void AttentionConfig::validate() const {
  if (dz == 0 || heads == 0 || dv == 0 || dqk == 0 || mlp_hidden == 0) {
    throw ConfigError("attention widths and head count must be positive");
  }
}

template <std::floating_point T>
AttentionBlock<T>::AttentionBlock(ParamStore<T>& store, const std::string& name, const AttentionConfig& cfg)
    : cfg_(cfg) {
  cfg.validate();
  ln1_ = LayerNorm<T>(store, name + ".ln1", cfg.dz);
  wq_ = Linear<T>(store, name + ".wq", cfg.dz, cfg.heads * cfg.dqk, false);
  wk_ = Linear<T>(store, name + ".wk", cfg.dz, cfg.heads * cfg.dqk, false);
  wv_ = Linear<T>(store, name + ".wv", cfg.dz, cfg.heads * cfg.dv, false);
  wo_ = Linear<T>(store, name + ".wo", cfg.heads * cfg.dv, cfg.dz, false);
  ln2_ = LayerNorm<T>(store, name + ".ln2", cfg.dz);
  mlp_ = Mlp<T>(store, name + ".mlp", cfg.dz, {cfg.mlp_hidden}, cfg.dz, Activation::gelu);
}

template <std::floating_point T>
Tensor<T> AttentionBlock<T>::attention_sublayer(const Tensor<T>& zq, const Tensor<T>& zkv, const AttentionMask* mask,
                                                std::vector<T>* weights) const {
  if (zq.rank() != 3 || zkv.rank() != 3 || zq.shape()[2] != cfg_.dz || zkv.shape()[2] != cfg_.dz) {
    throw ContractError("attention block expects (B, N, " + std::to_string(cfg_.dz) + ") tokens, got " +
                        shape_str(zq.shape()) + " and " + shape_str(zkv.shape()));
  }
  const Tensor<T> qn = ln1_(zq);
  const Tensor<T> kn = zq.node() == zkv.node() ? qn : ln1_(zkv);
  const T scale = T(1) / std::sqrt(T(cfg_.dqk));
  auto a = attention(wq_(qn), wk_(kn), wv_(kn), cfg_.heads, mask, scale, weights);
  return wo_(a);
}

template <std::floating_point T>
Tensor<T> AttentionBlock<T>::feed_forward(const Tensor<T>& z) const {
  return add(z, mlp_(ln2_(z)));
}

template <std::floating_point T>
Tensor<T> AttentionBlock<T>::finish(const Tensor<T>& zq, const Tensor<T>& attended) const {
  return feed_forward(add(zq, attended));
}

template <std::floating_point T>
Tensor<T> AttentionBlock<T>::self_attend(const Tensor<T>& z, const AttentionMask* mask, std::vector<T>* weights) const {
  return finish(z, attention_sublayer(z, z, mask, weights));
}

template <std::floating_point T>
Tensor<T> AttentionBlock<T>::cross_attend(const Tensor<T>& zq, const Tensor<T>& zkv, const AttentionMask* mask,
                                          std::vector<T>* weights) const {
  return finish(zq, attention_sublayer(zq, zkv, mask, weights));
}

template <std::floating_point T>
Tensor<T> AttentionBlock<T>::gathered_cross_attend(const Tensor<T>& zq, const Tensor<T>& source,
                                                   std::span<const std::int64_t> index, std::size_t slots,
                                                   std::vector<T>* weights) const {
  if (zq.rank() != 2 || zq.shape()[1] != cfg_.dz || source.rank() != 2 || source.shape()[1] != cfg_.dz) {
    throw ContractError("gathered attention expects (N, " + std::to_string(cfg_.dz) + ") tokens, got " +
                        shape_str(zq.shape()) + " and " + shape_str(source.shape()));
  }
  const std::size_t nq = zq.shape()[0];
  if (index.size() != nq * slots) {
    throw ContractError("gathered attention index holds " + std::to_string(index.size()) + " entries, expected " +
                        std::to_string(nq * slots));
  }
  const std::size_t hk = cfg_.heads * cfg_.dqk, hv = cfg_.heads * cfg_.dv;
  const Tensor<T> sn = ln1_(source);
  auto k = reshape(gather_rows(wk_(sn), index), {nq, slots, hk});
  auto v = reshape(gather_rows(wv_(sn), index), {nq, slots, hv});
  auto q = reshape(wq_(ln1_(zq)), {nq, 1, hk});
  AttentionMask mask(nq, 1, slots);
  for (std::size_t i = 0; i < index.size(); ++i) mask.allowed[i] = index[i] >= 0 ? 1 : 0;
  const T scale = T(1) / std::sqrt(T(cfg_.dqk));
  auto a = reshape(attention(q, k, v, cfg_.heads, &mask, scale, weights), {nq, hv});
  return finish(zq, wo_(a));
}

template <std::floating_point T>
VitProcessor<T>::VitProcessor(ParamStore<T>& store, const std::string& name, const AttentionConfig& cfg,
                              std::size_t layers, std::vector<std::size_t> patch)
    : patch_(std::move(patch)) {
  if (!patch_.empty()) {
    std::size_t p = 1;
    for (auto s : patch_) p *= s;
    patch_linear_ = Linear<T>(store, name + ".patch", p * cfg.dz, cfg.dz);
  }
  for (std::size_t l = 0; l < layers; ++l) blocks_.emplace_back(store, name + ".block" + std::to_string(l), cfg);
}

template <std::floating_point T>
PseudoTokenGrid<T> VitProcessor<T>::patch_encode(const PseudoTokenGrid<T>& grid) const {
  if (patch_.empty()) return grid;
  const GridSpec coarse = grid.spec.coarsen(patch_);
  const std::size_t D = grid.spec.dims();
  const std::size_t P = grid.spec.total() / coarse.total();
  std::vector<std::int64_t> order;
  order.reserve(grid.spec.total());
  GridSpec within = grid.spec;
  within.counts = patch_;
  std::vector<std::size_t> fine(D);
  for (std::size_t c = 0; c < coarse.total(); ++c) {
    const auto ci = coarse.unflatten(c);
    for (std::size_t o = 0; o < P; ++o) {
      const auto oi = within.unflatten(o);
      for (std::size_t d = 0; d < D; ++d) fine[d] = ci[d] * patch_[d] + oi[d];
      order.push_back(static_cast<std::int64_t>(grid.spec.flatten(fine)));
    }
  }
  const std::size_t dz = grid.U.dim(1);
  auto flat = reshape(gather_rows(grid.U, order), {coarse.total(), P * dz});
  return {patch_linear_(flat), coarse, Provenance::processed};
}

template <std::floating_point T>
PseudoTokenGrid<T> VitProcessor<T>::operator()(const PseudoTokenGrid<T>& grid) const {
  auto g = patch_encode(grid);
  const std::size_t M = g.spec.total();
  const std::size_t dz = g.U.dim(1);
  auto z = reshape(g.U, {1, M, dz});
  for (const auto& b : blocks_) z = b.self_attend(z);
  return {reshape(z, {M, dz}), g.spec, Provenance::processed};
}

void WindowSpec::validate(const GridSpec& grid) const {
  const std::size_t D = grid.dims();
  if (window.size() != D || shift.size() != D || roll.size() != D) {
    throw ContractError("window spec rank does not match grid rank");
  }
  for (std::size_t d = 0; d < D; ++d) {
    if (window[d] == 0) throw ContractError("window size must be positive");
    if (window[d] > grid.counts[d]) {
      throw ContractError("window " + std::to_string(window[d]) + " larger than grid count " +
                          std::to_string(grid.counts[d]) + " in dimension " + std::to_string(d));
    }
    if (shift[d] >= window[d]) throw ContractError("shift must be smaller than the window");
  }
}

WindowPlan make_window_plan(const GridSpec& grid, const WindowSpec& spec, bool shifted) {
  spec.validate(grid);
  const std::size_t D = grid.dims();
  std::vector<std::size_t> padded(D), nwin(D);
  WindowPlan plan;
  plan.windows = 1;
  plan.window_size = 1;
  for (std::size_t d = 0; d < D; ++d) {
    nwin[d] = (grid.counts[d] + spec.window[d] - 1) / spec.window[d];
    padded[d] = nwin[d] * spec.window[d];
    plan.windows *= nwin[d];
    plan.window_size *= spec.window[d];
  }
  const std::size_t W = plan.window_size;
  plan.gather.assign(plan.windows * W, -1);
  plan.inverse.assign(grid.total(), -1);
  std::vector<std::uint8_t> region(plan.windows * W * D, 0);

  GridSpec wgrid = grid, lgrid = grid;
  wgrid.counts = nwin;
  lgrid.counts = spec.window;
  std::vector<std::size_t> orig(D);
  for (std::size_t w = 0; w < plan.windows; ++w) {
    const auto wi = wgrid.unflatten(w);
    for (std::size_t s = 0; s < W; ++s) {
      const auto si = lgrid.unflatten(s);
      const std::size_t slot = w * W + s;
      bool filler = false;
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t p = wi[d] * spec.window[d] + si[d];
        const std::size_t sh = shifted ? spec.shift[d] : 0;
        if (spec.roll[d]) {
          if (p >= grid.counts[d]) {
            filler = true;
          } else {
            orig[d] = (p + sh) % grid.counts[d];
          }
        } else {
          std::size_t q = p + sh;
          if (q >= padded[d]) {
            q -= padded[d];
            region[slot * D + d] = 1;
          }
          if (q >= grid.counts[d]) filler = true;
          orig[d] = q;
        }
      }
      if (filler) continue;
      const std::size_t flat = grid.flatten(orig);
      plan.gather[slot] = static_cast<std::int64_t>(flat);
      plan.inverse[flat] = static_cast<std::int64_t>(slot);
    }
  }
  plan.mask = AttentionMask(plan.windows, W, W, 0);
  for (std::size_t w = 0; w < plan.windows; ++w) {
    for (std::size_t i = 0; i < W; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t a = w * W + i, b = w * W + j;
        bool ok = plan.gather[b] >= 0;
        for (std::size_t d = 0; ok && d < D; ++d) ok = region[a * D + d] == region[b * D + d];
        plan.mask.set(w, i, j, ok);
      }
    }
  }
  return plan;
}

template <std::floating_point T>
SwinProcessor<T>::SwinProcessor(ParamStore<T>& store, const std::string& name, const AttentionConfig& cfg,
                                std::size_t layers, WindowSpec spec)
    : spec_(std::move(spec)) {
  for (std::size_t l = 0; l < 2 * layers; ++l) {
    blocks_.emplace_back(store, name + ".block" + std::to_string(l), cfg);
  }
}

template <std::floating_point T>
Tensor<T> SwinProcessor<T>::apply_block(const Tensor<T>& U, const GridSpec& grid, std::size_t b, bool shifted,
                                        std::vector<T>* weights) const {
  const WindowPlan plan = make_window_plan(grid, spec_, shifted);
  const std::size_t dz = U.dim(1);
  auto x = reshape(gather_rows(U, plan.gather), {plan.windows, plan.window_size, dz});
  auto y = blocks_.at(b).self_attend(x, &plan.mask, weights);
  return gather_rows(reshape(y, {plan.windows * plan.window_size, dz}), plan.inverse);
}

template <std::floating_point T>
PseudoTokenGrid<T> SwinProcessor<T>::operator()(const PseudoTokenGrid<T>& grid) const {
  const WindowPlan plain = make_window_plan(grid.spec, spec_, false);
  const WindowPlan moved = make_window_plan(grid.spec, spec_, true);
  const std::size_t dz = grid.U.dim(1);
  Tensor<T> u = grid.U;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const WindowPlan& plan = b % 2 == 0 ? plain : moved;
    auto x = reshape(gather_rows(u, plan.gather), {plan.windows, plan.window_size, dz});
    auto y = blocks_[b].self_attend(x, &plan.mask);
    u = gather_rows(reshape(y, {plan.windows * plan.window_size, dz}), plan.inverse);
  }
  return {u, grid.spec, Provenance::processed};
}

template class AttentionBlock<float>;
template class AttentionBlock<double>;
template class VitProcessor<float>;
template class VitProcessor<double>;
template class SwinProcessor<float>;
template class SwinProcessor<double>;

}  // namespace gtnp
