#include "das/fast_train.hpp"

#include "das/errors.hpp"

#include <chrono>
#include <cmath>

namespace das {

void FastTrainConfig::check() const {
  if (e_f < 0) throw ConfigError("e_f must be >= 0");
  if (!(lr >= 0.0) || !(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("need lr >= 0 and momentum in [0, 1)");
}

FastTrainResult fast_train_network(Network& net, const Tensor& batch, std::span<const int> labels,
                                   const FastTrainConfig& cfg, Method method, Lambda lambda) {
  cfg.check();
  if (labels.size() != batch.extent(0)) throw ConfigError("label count does not match the scoring batch");
  const auto start = std::chrono::steady_clock::now();
  FastTrainResult r;
  r.checksum_before = param_checksum(net);
  for (int epoch = 1; epoch <= cfg.e_f && !r.trace.diverged_epoch; ++epoch) {
    const Tensor logits = forward(net, batch);
    Gradients g = backward(net, logits, labels);
    r.trace.loss.push_back(g.loss);
    if (!std::isfinite(g.loss)) {
      r.trace.diverged_epoch = epoch;
      break;
    }
    try {
      sgd_step(net, g, cfg.lr, cfg.momentum);
    } catch (const DivergenceError&) {
      r.trace.diverged_epoch = epoch;
    }
  }
  r.checksum_after = param_checksum(net);
  if (r.trace.diverged_epoch) {
    r.components.n = batch.extent(0);
    r.components.n_a = net.activation_units();
    r.score = Score{kNegInfinity, kNegInfinity, r.components.log_na(), 0.0};
  } else {
    r.components = score_components(extract_codes(net, batch));
    r.score = combine(r.components, method, lambda);
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

FastTrainResult fast_train_then_score(const ArchSpec& spec, const Skeleton& skel, const Tensor& batch,
                                      std::span<const int> labels, const FastTrainConfig& cfg, Method method,
                                      Lambda lambda) {
  const auto start = std::chrono::steady_clock::now();
  Network net = compile(spec, skel);
  init_params(net, cfg.seed);
  FastTrainResult r = fast_train_network(net, batch, labels, cfg, method, lambda);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace das
