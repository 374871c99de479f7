#include "hybridpipe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hybridpipe/random.hpp"

namespace hybridpipe {

std::int64_t parameter_offset(const NetworkSpec& spec, int layer) { return spec.parameter_count(0, layer); }

std::vector<double> init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1A7E));
  std::vector<double> params;
  params.reserve(static_cast<std::size_t>(spec.parameter_count_total()));
  for (const auto& d : spec.layer_dims) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d.in));
    for (int k = 0; k < d.in * d.out; ++k) params.push_back(rng.uniform(-bound, bound));
    for (int k = 0; k < d.out; ++k) params.push_back(rng.uniform(-0.1, 0.1));
  }
  return params;
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Relu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

double activate_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

LossResult loss_and_grad(const Matrix& pred, const Matrix& targets, LossKind kind, int total_microbatches,
                         double loss_scale, Precision precision) {
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and target shapes differ");
  }
  if (total_microbatches < 1) throw Error(ErrorCode::InvalidValue, "total_microbatches must be >= 1");
  const auto samples = static_cast<double>(pred.rows());
  const double coef = loss_scale / (samples * static_cast<double>(total_microbatches));
  LossResult out{0.0, Matrix(pred.rows(), pred.cols())};
  double sum = 0.0;
  if (kind == LossKind::SquaredError) {
    for (std::size_t s = 0; s < pred.rows(); ++s) {
      for (std::size_t o = 0; o < pred.cols(); ++o) {
        const double diff = pred(s, o) - targets(s, o);
        sum += 0.5 * diff * diff;
        out.grad(s, o) = diff * coef;
      }
    }
  } else {
    std::vector<double> probs(pred.cols());
    for (std::size_t s = 0; s < pred.rows(); ++s) {
      double peak = pred(s, 0);
      for (std::size_t o = 1; o < pred.cols(); ++o) peak = std::max(peak, pred(s, o));
      double z = 0.0;
      for (std::size_t o = 0; o < pred.cols(); ++o) {
        probs[o] = std::exp(pred(s, o) - peak);
        z += probs[o];
      }
      const double log_z = std::log(z);
      for (std::size_t o = 0; o < pred.cols(); ++o) {
        sum -= targets(s, o) * (pred(s, o) - peak - log_z);
        out.grad(s, o) = (probs[o] / z - targets(s, o)) * coef;
      }
    }
  }
  out.loss = sum * coef;
  apply_precision(precision, out.grad.values());
  return out;
}

NetworkShard::NetworkShard(const NetworkSpec& spec, int first_layer, int layer_count,
                           std::span<const double> master_params, Precision precision, int checkpoint_interval)
    : first_layer_(first_layer), ckpt_(1), precision_(precision) {
  if (layer_count <= 0 || first_layer < 0 || first_layer + layer_count > spec.num_layers()) {
    throw Error(ErrorCode::InvalidValue, "shard layer range outside the network");
  }
  std::int64_t offset = 0;
  for (int i = 0; i < layer_count; ++i) {
    const int global = first_layer + i;
    const auto& d = spec.layer_dims[static_cast<std::size_t>(global)];
    dims_.push_back(d);
    offsets_.push_back(offset);
    activations_.push_back(global == spec.num_layers() - 1 ? spec.output_activation : spec.hidden_activation);
    offset += static_cast<std::int64_t>(d.in) * d.out + d.out;
  }
  params16_.assign(static_cast<std::size_t>(offset), 0.0);
  grad_acc_.assign(params16_.size(), 0.0);
  set_checkpoint_interval(checkpoint_interval);
  if (static_cast<std::int64_t>(master_params.size()) == spec.parameter_count_total()) {
    load_parameters(master_params.subspan(static_cast<std::size_t>(parameter_offset(spec, first_layer)),
                                          params16_.size()));
  } else {
    load_parameters(master_params);
  }
}

void NetworkShard::set_checkpoint_interval(int ac) {
  if (ac <= 0 || layer_count() % ac != 0) {
    throw Error(ErrorCode::BadCheckpointInterval, "checkpoint interval " + std::to_string(ac) +
                                                      " does not divide shard depth " +
                                                      std::to_string(layer_count()));
  }
  ckpt_ = ac;
}

void NetworkShard::load_parameters(std::span<const double> master_params) {
  if (master_params.size() != params16_.size()) {
    throw Error(ErrorCode::LengthMismatch, "parameter vector has " + std::to_string(master_params.size()) +
                                               " elements, shard expects " + std::to_string(params16_.size()));
  }
  load_parameters(0, master_params);
}

void NetworkShard::load_parameters(std::int64_t offset, std::span<const double> master_slice) {
  if (offset < 0 || offset + static_cast<std::int64_t>(master_slice.size()) > parameter_count()) {
    throw Error(ErrorCode::LengthMismatch, "parameter slice outside the shard");
  }
  auto dst = params16_.begin() + offset;
  for (double v : master_slice) *dst++ = apply_precision(precision_, v);
}

void NetworkShard::note_units(int working) {
  peak_units_ = std::max(peak_units_, static_cast<int>(stash_.size()) + working);
}

std::pair<Matrix, Matrix> NetworkShard::layer_forward(int local, const Matrix& x) const {
  const auto& d = dims_[static_cast<std::size_t>(local)];
  const double* w = params16_.data() + layer_offset(local);
  const double* b = w + static_cast<std::ptrdiff_t>(d.in) * d.out;
  const Activation act = activations_[static_cast<std::size_t>(local)];
  Matrix z(x.rows(), static_cast<std::size_t>(d.out));
  Matrix y(x.rows(), static_cast<std::size_t>(d.out));
  for (std::size_t s = 0; s < x.rows(); ++s) {
    for (int o = 0; o < d.out; ++o) {
      const double* wrow = w + static_cast<std::ptrdiff_t>(o) * d.in;
      double acc = 0.0;
      for (int i = 0; i < d.in; ++i) acc += x(s, static_cast<std::size_t>(i)) * wrow[i];
      const double zv = apply_precision(precision_, acc + b[o]);
      z(s, static_cast<std::size_t>(o)) = zv;
      y(s, static_cast<std::size_t>(o)) = apply_precision(precision_, activate(act, zv));
    }
  }
  return {std::move(z), std::move(y)};
}

Matrix NetworkShard::forward(const Matrix& input, int microbatch_id) {
  if (static_cast<int>(input.cols()) != input_width()) {
    throw Error(ErrorCode::ShapeMismatch, "shard input width " + std::to_string(input.cols()) +
                                              ", expected " + std::to_string(input_width()));
  }
  if (stash_.count({microbatch_id, 0}) != 0) {
    throw Error(ErrorCode::InvalidValue, "microbatch " + std::to_string(microbatch_id) + " already in flight");
  }
  Matrix x = input;
  for (int local = 0; local < layer_count(); ++local) {
    if (local % ckpt_ == 0) stash_.emplace(std::pair{microbatch_id, local}, x);
    note_units(1);
    x = layer_forward(local, x).second;
  }
  return x;
}

Matrix NetworkShard::backward(int microbatch_id, const Matrix& output_grad) {
  auto first = stash_.find({microbatch_id, 0});
  if (first == stash_.end()) {
    throw Error(ErrorCode::UnknownMicrobatch, "backward for microbatch " + std::to_string(microbatch_id) +
                                                  " without a matching forward");
  }
  const std::size_t rows = first->second.rows();
  if (output_grad.rows() != rows || static_cast<int>(output_grad.cols()) != output_width()) {
    throw Error(ErrorCode::ShapeMismatch, "output gradient shape does not match the shard output");
  }
  std::vector<double> grads(params16_.size(), 0.0);
  Matrix dy = output_grad;
  const int segments = layer_count() / ckpt_;
  for (int seg = segments - 1; seg >= 0; --seg) {
    const int start = seg * ckpt_;
    auto entry = stash_.find({microbatch_id, start});
    std::vector<Matrix> xs{entry->second};
    std::vector<Matrix> zs;
    xs.reserve(static_cast<std::size_t>(ckpt_) + 1);
    for (int j = 0; j < ckpt_; ++j) {
      auto [z, y] = layer_forward(start + j, xs.back());
      zs.push_back(std::move(z));
      xs.push_back(std::move(y));
    }
    note_units(ckpt_ + 1);
    for (int j = ckpt_ - 1; j >= 0; --j) {
      const int local = start + j;
      const auto& d = dims_[static_cast<std::size_t>(local)];
      const Activation act = activations_[static_cast<std::size_t>(local)];
      const Matrix& x = xs[static_cast<std::size_t>(j)];
      const Matrix& z = zs[static_cast<std::size_t>(j)];
      const Matrix& y = xs[static_cast<std::size_t>(j) + 1];
      Matrix dz(rows, static_cast<std::size_t>(d.out));
      for (std::size_t s = 0; s < rows; ++s) {
        for (std::size_t o = 0; o < dz.cols(); ++o) {
          dz(s, o) = act == Activation::Identity
                         ? dy(s, o)
                         : apply_precision(precision_, dy(s, o) * activate_grad(act, z(s, o), y(s, o)));
        }
      }
      const double* w = params16_.data() + layer_offset(local);
      double* gw = grads.data() + layer_offset(local);
      double* gb = gw + static_cast<std::ptrdiff_t>(d.in) * d.out;
      for (int o = 0; o < d.out; ++o) {
        for (int i = 0; i < d.in; ++i) {
          double acc = 0.0;
          for (std::size_t s = 0; s < rows; ++s) acc += dz(s, static_cast<std::size_t>(o)) * x(s, static_cast<std::size_t>(i));
          gw[static_cast<std::ptrdiff_t>(o) * d.in + i] = acc;
        }
        double acc = 0.0;
        for (std::size_t s = 0; s < rows; ++s) acc += dz(s, static_cast<std::size_t>(o));
        gb[o] = acc;
      }
      Matrix dx(rows, static_cast<std::size_t>(d.in));
      for (std::size_t s = 0; s < rows; ++s) {
        for (int i = 0; i < d.in; ++i) {
          double acc = 0.0;
          for (int o = 0; o < d.out; ++o) acc += dz(s, static_cast<std::size_t>(o)) * w[static_cast<std::ptrdiff_t>(o) * d.in + i];
          dx(s, static_cast<std::size_t>(i)) = apply_precision(precision_, acc);
        }
      }
      dy = std::move(dx);
    }
    stash_.erase(entry);
  }
  apply_precision(precision_, grads);
  pending_grads_[microbatch_id] = std::move(grads);
  return dy;
}

void NetworkShard::begin_batch() {
  pending_grads_.clear();
  std::fill(grad_acc_.begin(), grad_acc_.end(), 0.0);
}

void NetworkShard::drain() {
  std::fill(grad_acc_.begin(), grad_acc_.end(), 0.0);
  for (const auto& [id, g] : pending_grads_) {
    for (std::size_t k = 0; k < g.size(); ++k) grad_acc_[k] += g[k];
  }
  apply_precision(precision_, grad_acc_);
  pending_grads_.clear();
}

std::vector<int> NetworkShard::stashed_layers(int microbatch_id) const {
  std::vector<int> layers;
  for (auto it = stash_.lower_bound({microbatch_id, 0}); it != stash_.end() && it->first.first == microbatch_id; ++it) {
    layers.push_back(it->first.second);
  }
  return layers;
}

}  // namespace hybridpipe
