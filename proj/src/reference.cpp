#include "hybridpipe/reference.hpp"

#include <algorithm>
#include <cmath>

namespace hybridpipe {

SerialReference::SerialReference(const ValidatedRun& run, std::vector<double> initial_params)
    : run_(run), params_(std::move(initial_params)), m_(params_.size(), 0.0), v_(params_.size(), 0.0) {
  if (static_cast<std::int64_t>(params_.size()) != run_.config.network.parameter_count_total()) {
    throw Error(ErrorCode::LengthMismatch, "reference parameters do not match the network");
  }
}

double SerialReference::accumulate(const DataBatch& batch, std::size_t first, std::size_t rows, int divisor,
                                   std::vector<double>& grad) const {
  const auto& net = run_.config.network;
  const Precision prec = run_.config.precision;
  const double scale = run_.config.optimizer.loss_scale;
  const auto n_layers = static_cast<std::size_t>(net.num_layers());

  // acts[l] is the input of layer l, pre[l] its pre-activation; both rows x width.
  std::vector<std::vector<double>> acts(n_layers + 1), pre(n_layers);
  const auto in0 = static_cast<std::size_t>(net.layer_dims[0].in);
  acts[0].resize(rows * in0);
  for (std::size_t s = 0; s < rows; ++s) {
    for (std::size_t i = 0; i < in0; ++i) acts[0][s * in0 + i] = batch.inputs(first + s, i);
  }
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    offsets.push_back(offset);
    const auto in = static_cast<std::size_t>(net.layer_dims[l].in);
    const auto out = static_cast<std::size_t>(net.layer_dims[l].out);
    const Activation act = l + 1 == n_layers ? net.output_activation : net.hidden_activation;
    const double* w = params_.data() + offset;
    const double* b = w + in * out;
    pre[l].resize(rows * out);
    acts[l + 1].resize(rows * out);
    for (std::size_t s = 0; s < rows; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        double sum = 0.0;
        for (std::size_t i = 0; i < in; ++i) {
          sum += acts[l][s * in + i] * apply_precision(prec, w[o * in + i]);
        }
        const double z = apply_precision(prec, sum + apply_precision(prec, b[o]));
        pre[l][s * out + o] = z;
        acts[l + 1][s * out + o] = apply_precision(prec, activate(act, z));
      }
    }
    offset += in * out + out;
  }

  const auto out_w = static_cast<std::size_t>(net.layer_dims.back().out);
  const double coef = scale / (static_cast<double>(rows) * static_cast<double>(divisor));
  std::vector<double> dy(rows * out_w);
  double loss_sum = 0.0;
  const auto& pred = acts[n_layers];
  for (std::size_t s = 0; s < rows; ++s) {
    if (net.loss == LossKind::SquaredError) {
      for (std::size_t o = 0; o < out_w; ++o) {
        const double diff = pred[s * out_w + o] - batch.targets(first + s, o);
        loss_sum += 0.5 * diff * diff;
        dy[s * out_w + o] = apply_precision(prec, diff * coef);
      }
    } else {
      double peak = pred[s * out_w];
      for (std::size_t o = 1; o < out_w; ++o) peak = std::max(peak, pred[s * out_w + o]);
      std::vector<double> e(out_w);
      double z = 0.0;
      for (std::size_t o = 0; o < out_w; ++o) {
        e[o] = std::exp(pred[s * out_w + o] - peak);
        z += e[o];
      }
      const double log_z = std::log(z);
      for (std::size_t o = 0; o < out_w; ++o) {
        const double t = batch.targets(first + s, o);
        loss_sum -= t * (pred[s * out_w + o] - peak - log_z);
        dy[s * out_w + o] = apply_precision(prec, (e[o] / z - t) * coef);
      }
    }
  }

  grad.assign(params_.size(), 0.0);
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto in = static_cast<std::size_t>(net.layer_dims[l].in);
    const auto out = static_cast<std::size_t>(net.layer_dims[l].out);
    const Activation act = l + 1 == n_layers ? net.output_activation : net.hidden_activation;
    std::vector<double> dz(rows * out);
    for (std::size_t k = 0; k < dz.size(); ++k) {
      dz[k] = act == Activation::Identity
                  ? dy[k]
                  : apply_precision(prec, dy[k] * activate_grad(act, pre[l][k], acts[l + 1][k]));
    }
    double* gw = grad.data() + offsets[l];
    double* gb = gw + in * out;
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i) {
        double sum = 0.0;
        for (std::size_t s = 0; s < rows; ++s) sum += dz[s * out + o] * acts[l][s * in + i];
        gw[o * in + i] = sum;
      }
      double sum = 0.0;
      for (std::size_t s = 0; s < rows; ++s) sum += dz[s * out + o];
      gb[o] = sum;
    }
    const double* w = params_.data() + offsets[l];
    std::vector<double> dx(rows * in);
    for (std::size_t s = 0; s < rows; ++s) {
      for (std::size_t i = 0; i < in; ++i) {
        double sum = 0.0;
        for (std::size_t o = 0; o < out; ++o) sum += dz[s * out + o] * apply_precision(prec, w[o * in + i]);
        dx[s * in + i] = apply_precision(prec, sum);
      }
    }
    dy = std::move(dx);
  }
  for (double& g : grad) g = apply_precision(prec, g);
  return loss_sum * coef;
}

SerialReference::Gradient SerialReference::full_batch_gradient(const DataBatch& batch) const {
  Gradient g;
  g.loss = accumulate(batch, 0, batch.samples(), 1, g.grad) / run_.config.optimizer.loss_scale;
  return g;
}

SerialReference::Gradient SerialReference::partitioned_gradient(const DataBatch& batch) const {
  const Precision prec = run_.config.precision;
  const auto g_data = static_cast<std::size_t>(run_.config.parallel.g_data);
  const auto shard = static_cast<std::size_t>(run_.shard_size);
  const auto micro = static_cast<std::size_t>(run_.config.parallel.microbatch_size);
  std::vector<std::vector<double>> replica_sums(g_data, std::vector<double>(params_.size(), 0.0));
  double loss = 0.0;
  std::vector<double> part;
  for (std::size_t r = 0; r < g_data; ++r) {
    for (std::size_t first = r * shard; first < (r + 1) * shard; first += micro) {
      loss += accumulate(batch, first, micro, run_.total_microbatches, part);
      for (std::size_t k = 0; k < part.size(); ++k) replica_sums[r][k] += part[k];
    }
    for (double& g : replica_sums[r]) g = apply_precision(prec, g);
  }
  Gradient out;
  out.grad = replica_sums[0];
  for (std::size_t k = 0; k < out.grad.size(); ++k) {
    for (std::size_t r = 1; r < g_data; ++r) out.grad[k] += replica_sums[r][k];
    out.grad[k] = apply_precision(prec, out.grad[k]);
  }
  out.loss = loss / run_.config.optimizer.loss_scale;
  return out;
}

SerialReference::Gradient SerialReference::gradient(const DataBatch& batch) const {
  return run_.config.precision == Precision::Mixed ? partitioned_gradient(batch) : full_batch_gradient(batch);
}

double SerialReference::step(const DataBatch& batch) {
  const auto g = gradient(batch);
  const auto& o = run_.config.optimizer;
  ++step_;
  const double bias1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const double grad = g.grad[k] / o.loss_scale;
    m_[k] = o.beta1 * m_[k] + (1.0 - o.beta1) * grad;
    v_[k] = o.beta2 * v_[k] + (1.0 - o.beta2) * grad * grad;
    params_[k] *= 1.0 - o.learning_rate * o.weight_decay;
    params_[k] -= o.learning_rate * (m_[k] / bias1) / (std::sqrt(v_[k] / bias2) + o.epsilon);
  }
  return g.loss;
}

}  // namespace hybridpipe
