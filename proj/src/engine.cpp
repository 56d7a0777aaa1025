#include "blendiff/engine.hpp"

#include <cstdlib>

namespace blendiff {

std::string default_data_dir() {
    if (const char* env = std::getenv("BLENDIFF_DATA_DIR"); env && *env) return env;
    return BLENDIFF_DATA_DIR;
}

EngineConfig default_engine_config() {
    EngineConfig c;
    const std::string dir = default_data_dir();
    c.prior_path = dir + "/prior.json";
    c.lexicon_path = dir + "/lexicon.json";
    return c;
}

EngineBundle load_engine(const EngineConfig& config) {
    std::unique_ptr<Denoiser> denoiser;
    if (!config.net_path.empty())
        denoiser = std::make_unique<NetDenoiser>(LoadedNet::load(config.net_path));
    else
        denoiser = std::make_unique<GmmDenoiser>(GaussianMixturePrior::load(config.prior_path));
    return {std::move(denoiser),
            std::make_unique<LexiconEmbedder>(LexiconEmbedder::load(config.lexicon_path, config.embed_size)),
            NoiseSchedule::from_spec(config.schedule)};
}

}  // namespace blendiff
