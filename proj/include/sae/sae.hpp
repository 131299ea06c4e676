// Umbrella header.
#pragma once

#include "sae/checkpoint.hpp"
#include "sae/config.hpp"
#include "sae/cost_model.hpp"
#include "sae/data.hpp"
#include "sae/depth_posterior.hpp"
#include "sae/evaluator.hpp"
#include "sae/metrics.hpp"
#include "sae/network.hpp"
#include "sae/network_cost.hpp"
#include "sae/objective.hpp"
#include "sae/random.hpp"
#include "sae/records.hpp"
#include "sae/run.hpp"
#include "sae/tensor.hpp"
#include "sae/trainer.hpp"
