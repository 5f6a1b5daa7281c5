#pragma once

#include <vector>

#include "gwf/waveformer.hpp"

namespace gwf {

/// One window slot as seen by the trace instrumentation.
struct WindowTag {
    int time_index;  // time step the field belongs to
    bool predicted;  // true for model outputs, false for given data
    bool operator==(const WindowTag&) const = default;
};

/// Per prediction step, the window contents immediately before the step.
using WindowTrace = std::vector<std::vector<WindowTag>>;

/// Sliding-window autoregressive roll-out: predict the next field, drop the
/// oldest window entry, append the prediction; repeats `horizon` times.
/// Fields are normalized (N, d0) tensors; encodings are memoized per field
/// within the shared session. Throws NumericError naming the step on a
/// non-finite prediction.
std::vector<Tensor> predict_steps(const GeoWaveformer& model,
                                  const std::vector<Tensor>& window, int horizon,
                                  WindowTrace* trace = nullptr);

/// Progressive roll-out from a single initial field: the window starts as k
/// copies of u0 and fills with predictions; reaching step n runs the model n
/// times.
std::vector<Tensor> progressive_predict(const GeoWaveformer& model, const Tensor& u0,
                                        int horizon, WindowTrace* trace = nullptr);

}  // namespace gwf
