#include "hybridpipe/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hybridpipe {

OptimizerState OptimizerState::from_parameters(std::span<const double> params) {
  OptimizerState s;
  s.master_params.assign(params.begin(), params.end());
  s.first_moment.assign(params.size(), 0.0);
  s.second_moment.assign(params.size(), 0.0);
  return s;
}

AdamCoefficients AdamCoefficients::for_step(const OptimizerConfig& cfg, std::int64_t step) {
  const auto t = static_cast<double>(step);
  return {cfg.learning_rate,
          cfg.beta1,
          cfg.beta2,
          cfg.epsilon,
          1.0 - cfg.learning_rate * cfg.weight_decay,
          1.0 - std::pow(cfg.beta1, t),
          1.0 - std::pow(cfg.beta2, t)};
}

void adam_update(std::span<double> params, std::span<double> first_moment, std::span<double> second_moment,
                 std::span<const double> grad, const AdamCoefficients& c) {
  if (params.size() != grad.size() || first_moment.size() != grad.size() || second_moment.size() != grad.size()) {
    throw Error(ErrorCode::LengthMismatch, "adam slices differ in length");
  }
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double g = grad[k];
    first_moment[k] = c.beta1 * first_moment[k] + (1.0 - c.beta1) * g;
    second_moment[k] = c.beta2 * second_moment[k] + (1.0 - c.beta2) * g * g;
    const double m_hat = first_moment[k] / c.bias_correction1;
    const double v_hat = second_moment[k] / c.bias_correction2;
    params[k] *= c.decay_factor;
    params[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

std::vector<double> promote_and_descale(std::span<const Half> grad16, double loss_scale) {
  std::vector<double> out = dequantize(grad16);
  for (double& g : out) g /= loss_scale;
  return out;
}

std::vector<double> promote_and_descale(std::span<const double> grad16, double loss_scale) {
  std::vector<double> out(grad16.size());
  promote_and_descale_into(grad16, loss_scale, out);
  return out;
}

void promote_and_descale_into(std::span<const double> grad16, double loss_scale, std::span<double> out) {
  if (!(loss_scale > 0)) throw Error(ErrorCode::InvalidValue, "loss_scale must be positive");
  for (std::size_t k = 0; k < grad16.size(); ++k) out[k] = grad16[k] / loss_scale;
}

std::int64_t first_nonfinite(std::span<const double> grad16, double loss_scale) {
  for (std::size_t k = 0; k < grad16.size(); ++k) {
    if (!std::isfinite(grad16[k] / loss_scale)) return static_cast<std::int64_t>(k);
  }
  return -1;
}

void adam_step(OptimizerState& state, std::span<const double> grad, const OptimizerConfig& cfg,
               const ParamSink& refresh) {
  if (static_cast<std::int64_t>(grad.size()) != state.size()) {
    throw Error(ErrorCode::LengthMismatch, "gradient length does not match optimizer state");
  }
  if (const auto bad = first_nonfinite(grad, 1.0); bad >= 0) {
    throw Error(ErrorCode::NonFiniteGradient, "gradient element " + std::to_string(bad) + " is not finite");
  }
  ++state.step_count;
  adam_update(state.master_params, state.first_moment, state.second_moment, grad,
              AdamCoefficients::for_step(cfg, state.step_count));
  if (refresh) refresh(0, state.master_params);
}

OffloadStore::OffloadStore(OptimizerState host_state, std::int64_t bucket_size)
    : host_(std::move(host_state)), bucket_size_(bucket_size) {
  if (bucket_size_ <= 0) throw Error(ErrorCode::InvalidValue, "bucket_size must be positive");
  bucket_count_ = static_cast<int>((host_.size() + bucket_size_ - 1) / bucket_size_);
  const auto scratch = static_cast<std::size_t>(std::min(bucket_size_, std::max<std::int64_t>(host_.size(), 1)));
  device_params_.resize(scratch);
  device_m_.resize(scratch);
  device_v_.resize(scratch);
  device_grad_.resize(scratch);
}

std::pair<std::int64_t, std::int64_t> OffloadStore::bucket_range(int bucket) const {
  const std::int64_t begin = static_cast<std::int64_t>(bucket) * bucket_size_;
  return {begin, std::min(begin + bucket_size_, host_.size())};
}

void OffloadStore::record(ResidencyOp op, int bucket) {
  peak_device_bytes_ = std::max(peak_device_bytes_, device_bytes_);
  trace_.push_back({op, bucket, device_bytes_});
}

void OffloadStore::begin_step(std::span<const double> grad16, double loss_scale) {
  if (static_cast<std::int64_t>(grad16.size()) != host_.size()) {
    throw Error(ErrorCode::LengthMismatch, "gradient length does not match optimizer state");
  }
  if (!(loss_scale > 0)) throw Error(ErrorCode::InvalidValue, "loss_scale must be positive");
  if (const auto bad = first_nonfinite(grad16, loss_scale); bad >= 0) {
    throw Error(ErrorCode::NonFiniteGradient, "bucket " + std::to_string(bad / bucket_size_) +
                                                  ": gradient element " + std::to_string(bad) +
                                                  " is not finite after descaling");
  }
  loss_scale_ = loss_scale;
  ++host_.step_count;
  next_bucket_ = 0;
  in_step_ = true;
}

void OffloadStore::step_bucket(int bucket, std::span<const double> grad16, const OptimizerConfig& cfg,
                               const ParamSink& refresh) {
  if (!in_step_) throw Error(ErrorCode::InvalidValue, "step_bucket outside begin_step/end_step");
  if (bucket != next_bucket_) {
    throw Error(ErrorCode::InvalidValue, "bucket " + std::to_string(bucket) + " out of order, expected " +
                                             std::to_string(next_bucket_));
  }
  const auto [begin, end] = bucket_range(bucket);
  const auto n = static_cast<std::size_t>(end - begin);
  const auto b = static_cast<std::size_t>(begin);

  std::copy_n(host_.master_params.begin() + begin, n, device_params_.begin());
  std::copy_n(host_.first_moment.begin() + begin, n, device_m_.begin());
  std::copy_n(host_.second_moment.begin() + begin, n, device_v_.begin());
  resident_bucket_ = bucket;
  device_bytes_ = static_cast<std::int64_t>(n) * (kParamBytes + kMomentBytes);
  record(ResidencyOp::Fetch, bucket);

  std::span<double> grad(device_grad_.data(), n);
  promote_and_descale_into(grad16.subspan(b, n), loss_scale_, grad);
  device_bytes_ += static_cast<std::int64_t>(n) * kScratchBytes;
  record(ResidencyOp::Descale, bucket);

  std::span<double> params(device_params_.data(), n);
  adam_update(params, std::span<double>(device_m_.data(), n), std::span<double>(device_v_.data(), n), grad,
              AdamCoefficients::for_step(cfg, host_.step_count));
  record(ResidencyOp::Update, bucket);

  std::copy_n(device_params_.begin(), n, host_.master_params.begin() + begin);
  std::copy_n(device_m_.begin(), n, host_.first_moment.begin() + begin);
  std::copy_n(device_v_.begin(), n, host_.second_moment.begin() + begin);
  if (refresh) refresh(begin, params);
  record(ResidencyOp::WriteBack, bucket);

  resident_bucket_ = -1;
  device_bytes_ = 0;
  record(ResidencyOp::Release, bucket);
  ++next_bucket_;
}

void OffloadStore::end_step() {
  if (in_step_ && next_bucket_ != bucket_count_) {
    throw Error(ErrorCode::InvalidValue, "step ended after " + std::to_string(next_bucket_) + " of " +
                                             std::to_string(bucket_count_) + " buckets");
  }
  in_step_ = false;
}

void bucketed_step(OffloadStore& store, std::span<const double> grad16, const OptimizerConfig& cfg,
                   const ParamSink& refresh) {
  store.begin_step(grad16, cfg.loss_scale);
  for (int b = 0; b < store.bucket_count(); ++b) store.step_bucket(b, grad16, cfg, refresh);
  store.end_step();
}

}  // namespace hybridpipe
