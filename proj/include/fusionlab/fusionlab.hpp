#pragma once

#include "fusionlab/error.hpp"
#include "fusionlab/tensor.hpp"
#include "fusionlab/rng.hpp"
#include "fusionlab/autodiff.hpp"
#include "fusionlab/ops.hpp"
#include "fusionlab/layers.hpp"
#include "fusionlab/gradcheck.hpp"
#include "fusionlab/embedding_store.hpp"
#include "fusionlab/fusion.hpp"
#include "fusionlab/model.hpp"
#include "fusionlab/metrics.hpp"
#include "fusionlab/training.hpp"
#include "fusionlab/evaluation.hpp"
#include "fusionlab/synthetic.hpp"
#include "fusionlab/config.hpp"
