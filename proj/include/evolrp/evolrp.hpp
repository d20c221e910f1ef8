#pragma once

#include "evolrp/baselines.hpp"
#include "evolrp/cmaes.hpp"
#include "evolrp/dataset.hpp"
#include "evolrp/genome.hpp"
#include "evolrp/image_io.hpp"
#include "evolrp/lrp.hpp"
#include "evolrp/methods.hpp"
#include "evolrp/metrics.hpp"
#include "evolrp/model.hpp"
#include "evolrp/model_io.hpp"
#include "evolrp/network.hpp"
#include "evolrp/optimize.hpp"
#include "evolrp/pareto.hpp"
#include "evolrp/relevance_maps.hpp"
#include "evolrp/serialization.hpp"
#include "evolrp/tensor.hpp"
#include "evolrp/train.hpp"
