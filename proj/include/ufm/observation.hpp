#pragma once

#include <optional>

#include "ufm/geometry.hpp"
#include "ufm/image.hpp"

namespace ufm {

/// One ingested view of the scene.
struct FrameObservation {
  int frame_index = 0;
  int model_id = 1;
  Pose pose;
  DepthMap depth;
  std::optional<VarianceMap> aleatoric;
  std::optional<VarianceMap> epistemic;
  std::optional<DepthMap> ground_truth;

  /// Throws ShapeMismatch if any optional map differs in size from the depth map.
  void check_shapes() const {
    if (aleatoric) require_same_shape(depth, *aleatoric, "aleatoric map shape differs from depth");
    if (epistemic) require_same_shape(depth, *epistemic, "epistemic map shape differs from depth");
    if (ground_truth) require_same_shape(depth, *ground_truth, "ground truth shape differs from depth");
  }
};

}  // namespace ufm
