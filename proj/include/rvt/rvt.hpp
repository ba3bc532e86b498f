#pragma once

// Umbrella header.

#include "rvt/bench.hpp"
#include "rvt/config.hpp"
#include "rvt/data.hpp"
#include "rvt/decode.hpp"
#include "rvt/evaluate.hpp"
#include "rvt/geom.hpp"
#include "rvt/image_io.hpp"
#include "rvt/language.hpp"
#include "rvt/model.hpp"
#include "rvt/nn/grad_check.hpp"
#include "rvt/nn/layers.hpp"
#include "rvt/nn/ops.hpp"
#include "rvt/nn/optim.hpp"
#include "rvt/nn/tensor.hpp"
#include "rvt/nn/weights.hpp"
#include "rvt/render.hpp"
#include "rvt/train.hpp"
