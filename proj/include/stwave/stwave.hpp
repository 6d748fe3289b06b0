#pragma once

// Umbrella header for the STWave forecasting toolkit.

#include "stwave/attention.hpp"
#include "stwave/config.hpp"
#include "stwave/dataset.hpp"
#include "stwave/eigen.hpp"
#include "stwave/error.hpp"
#include "stwave/experiment.hpp"
#include "stwave/grad_check.hpp"
#include "stwave/graph.hpp"
#include "stwave/init.hpp"
#include "stwave/model.hpp"
#include "stwave/positional.hpp"
#include "stwave/serialize.hpp"
#include "stwave/tape.hpp"
#include "stwave/tensor.hpp"
#include "stwave/training.hpp"
#include "stwave/wavelet.hpp"
