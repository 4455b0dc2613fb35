#pragma once

// Projection-based volumetric segmentation: maximum intensity projections
// from many directions, a shared 2D U-net, and a learnable filtered
// backprojection lifting the segmented projections back to 3D.

#include "mipseg/common.hpp"
#include "mipseg/config.hpp"
#include "mipseg/geometry.hpp"
#include "mipseg/gradcheck.hpp"
#include "mipseg/io.hpp"
#include "mipseg/loss.hpp"
#include "mipseg/model.hpp"
#include "mipseg/nn.hpp"
#include "mipseg/optim.hpp"
#include "mipseg/phantom.hpp"
#include "mipseg/rng.hpp"
#include "mipseg/tensor.hpp"
#include "mipseg/train.hpp"
#include "mipseg/unet.hpp"
#include "mipseg/volume.hpp"
