#pragma once

#include <optional>
#include <string>
#include <vector>

#include "riir/grid.hpp"

namespace riir {

// Ground truth follows the backward-warp convention: warp_image(mov, gt) ~ fixed.
struct RegistrationPair {
    std::string id;
    Image mov;
    Image fixed;
    std::optional<LabelMap> labels_mov;
    std::optional<LabelMap> labels_fixed;
    std::optional<DisplacementField> ground_truth;
};

// The last frame is the template. `reference` holds the same frames without motion.
struct ImageSeries {
    std::string id;
    std::vector<Image> frames;
    std::vector<DisplacementField> ground_truth;
    std::optional<LabelMap> labels;
    std::vector<Image> reference;
};

}  // namespace riir
