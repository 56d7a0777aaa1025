#pragma once

// Loads the denoiser, embedder and schedule an editing run needs.

#include <memory>
#include <string>

#include "blendiff/editor.hpp"

namespace blendiff {

struct EngineConfig {
    std::string prior_path;    // GMM prior JSON; used when net_path is empty
    std::string net_path;      // optional BDNET1 weights file
    std::string lexicon_path;
    int embed_size = 64;
    ScheduleSpec schedule;     // defaults to linear T=1000 respaced to 100
};

// Default data directory: $BLENDIFF_DATA_DIR or the build-time path.
std::string default_data_dir();
EngineConfig default_engine_config();

struct EngineBundle {
    std::unique_ptr<Denoiser> denoiser;
    std::unique_ptr<GuidanceModel> guidance;
    NoiseSchedule schedule;

    EditEngine engine(unsigned workers = 0) const { return {*denoiser, *guidance, schedule, workers}; }
};

EngineBundle load_engine(const EngineConfig& config);

}  // namespace blendiff
