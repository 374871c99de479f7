#pragma once

namespace hybridpipe {

/// Timing parameters of the performance simulator. Times are seconds,
/// bandwidths bytes per second.
struct CostModel {
  double device_flops = 1.0e12;
  /// Backward pass cost relative to forward (backward takes twice as long
  /// as forward by default).
  double backward_multiplier = 2.0;
  double link_latency = 5.0e-6;
  double link_bandwidth = 25.0e9;
  /// Ring all-reduce: per-step latency and per-link bandwidth.
  double collective_latency = 5.0e-6;
  double collective_bandwidth = 12.5e9;
  /// Fixed launch/synchronization cost paid once per all-reduce call.
  double collective_call_overhead = 2.0e-3;
  double host_bandwidth = 16.0e9;
  /// Optimizer arithmetic per parameter (Adam update on the device).
  double optimizer_flops_per_param = 16.0;
};

}  // namespace hybridpipe
