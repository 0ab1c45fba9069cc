#pragma once

#include <cstdint>
#include <filesystem>

#include "lens/videoio.hpp"

namespace lens {

/// Parameters of the synthetic low-light dataset. Defaults give a desk-scale run;
/// groups_per_action=20, clips_per_group=45 at 640x480 mirrors the full dataset layout.
struct SynthParams {
    std::uint64_t seed = 7;
    int groups_per_action = 2;
    int clips_per_group = 3;
    int width = 64;
    int height = 64;
    int fps = 30;
    double noise_sigma = 8.0;
};

/// Renders one labeled clip. Pure function of (params, label, group, clip).
///
/// Every clip is a dark noisy scene shared by its group, with two actors whose motion and
/// props depend on the label:
///   Theft     actors converge; the second one leaves fast carrying a bright bag
///   Assault   actors lock together and push back and forth; the attacker holds a stick
///   Shooting  the shooter stands still holding a gun, a two-frame muzzle flash fires,
///             and the victim falls
///   NoAction  independent random walks, no props
Clip render_clip(const SynthParams& params, ActionLabel label, int group, int clip);

struct DatasetSummary {
    std::size_t clips = 0;
    std::size_t frames = 0;
};

/// Writes the dataset tree plus `dataset.json`. Throws InvalidArgument for dimensions
/// below 32x32 and Error when the output directory cannot be written.
DatasetSummary generate_synthetic_dataset(const SynthParams& params, const std::filesystem::path& out_dir);

/// Mean BT.601 luma of a frame in [0, 255].
double mean_luminance(const Frame& frame);

}  // namespace lens
