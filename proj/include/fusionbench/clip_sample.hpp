#pragma once

#include <cstddef>

#include "fusionbench/backbone.hpp"
#include "fusionbench/stream_encoder.hpp"

namespace fusionbench {

// One training/evaluation unit: a fixed-length clip, the stream values
// resampled onto its frame timestamps, and the frame label at the anchor.
struct ClipSample {
    VideoClip clip;
    StreamSeries stream_window;
    std::size_t label = 0;
    double anchor_time = 0.0;
};

}  // namespace fusionbench
