#include "gwf/rollout.hpp"

#include <deque>
#include <unordered_map>

namespace gwf {

namespace {

struct Slot {
    Tensor field;  // normalized (N, d0)
    WindowTag tag;
};

std::vector<Tensor> run_rollout(const GeoWaveformer& model, std::deque<Slot> window,
                                int horizon, int first_prediction_index,
                                WindowTrace* trace) {
    if (horizon < 1) throw ShapeError("rollout: horizon must be >= 1");
    auto session = model.begin_session();
    // encodings memoized per field identity: window slots overlap across
    // steps (and the progressive scheme repeats u0), so each distinct field
    // is encoded exactly once per roll-out; the map retains the field tensor
    // so node addresses stay unique
    std::unordered_map<const void*, std::pair<Tensor, Tensor>> encoded;
    auto encode = [&](const Tensor& field) {
        auto it = encoded.find(field.node().get());
        if (it != encoded.end()) return it->second.second;
        Tensor lat = model.encode_field(field, session);
        encoded.emplace(field.node().get(), std::make_pair(field, lat));
        return lat;
    };

    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(horizon));
    for (int step = 0; step < horizon; ++step) {
        if (trace) {
            std::vector<WindowTag> tags;
            for (const Slot& s : window) tags.push_back(s.tag);
            trace->push_back(std::move(tags));
        }
        std::vector<Tensor> latents;
        latents.reserve(window.size());
        for (const Slot& s : window) latents.push_back(encode(s.field));
        Tensor next = model.decode_latent(model.waveformer_next(latents), session);
        if (!next.all_finite())
            throw NumericError("rollout: non-finite prediction at step " +
                               std::to_string(step + 1));
        out.push_back(next);
        window.pop_front();
        window.push_back(Slot{next, WindowTag{first_prediction_index + step, true}});
    }
    return out;
}

}  // namespace

std::vector<Tensor> predict_steps(const GeoWaveformer& model,
                                  const std::vector<Tensor>& window, int horizon,
                                  WindowTrace* trace) {
    const int k = static_cast<int>(window.size());
    if (k < 2) throw ShapeError("predict_steps: window length must be >= 2");
    std::deque<Slot> slots;
    for (int i = 0; i < k; ++i)
        slots.push_back(Slot{window[static_cast<size_t>(i)], WindowTag{i, false}});
    return run_rollout(model, std::move(slots), horizon, k, trace);
}

std::vector<Tensor> progressive_predict(const GeoWaveformer& model, const Tensor& u0,
                                        int horizon, WindowTrace* trace) {
    const int k = model.config().window;
    std::deque<Slot> slots;
    for (int i = 0; i < k; ++i) slots.push_back(Slot{u0, WindowTag{0, false}});
    return run_rollout(model, std::move(slots), horizon, 1, trace);
}

}  // namespace gwf
