#pragma once

#include "advgen/attack.hpp"
#include "advgen/error.hpp"
#include "advgen/experiment.hpp"
#include "advgen/gradcheck.hpp"
#include "advgen/graph.hpp"
#include "advgen/image_io.hpp"
#include "advgen/metrics.hpp"
#include "advgen/models.hpp"
#include "advgen/optim.hpp"
#include "advgen/presets.hpp"
#include "advgen/rng.hpp"
#include "advgen/tensor.hpp"
