#pragma once

#include "ufm/commands.hpp"
#include "ufm/common.hpp"
#include "ufm/config.hpp"
#include "ufm/data_io.hpp"
#include "ufm/engine.hpp"
#include "ufm/gauss_ot.hpp"
#include "ufm/gaussian.hpp"
#include "ufm/geometry.hpp"
#include "ufm/image.hpp"
#include "ufm/metrics.hpp"
#include "ufm/observation.hpp"
#include "ufm/reference_disagreement.hpp"
#include "ufm/segmentation.hpp"
#include "ufm/spatial_index.hpp"
#include "ufm/synthetic.hpp"
#include "ufm/text.hpp"
