#pragma once

// Umbrella header for the whole library.

#include "mmgf/cli.hpp"
#include "mmgf/dataset.hpp"
#include "mmgf/encoder.hpp"
#include "mmgf/error.hpp"
#include "mmgf/fusion.hpp"
#include "mmgf/gnn.hpp"
#include "mmgf/graph.hpp"
#include "mmgf/io.hpp"
#include "mmgf/metrics.hpp"
#include "mmgf/ops.hpp"
#include "mmgf/optim.hpp"
#include "mmgf/split.hpp"
#include "mmgf/tensor.hpp"
#include "mmgf/train.hpp"
