#pragma once

#include "hystar/checkpoint.hpp"
#include "hystar/checks.hpp"
#include "hystar/config.hpp"
#include "hystar/dataset.hpp"
#include "hystar/encoder.hpp"
#include "hystar/errors.hpp"
#include "hystar/gradcheck.hpp"
#include "hystar/graph.hpp"
#include "hystar/hypernet.hpp"
#include "hystar/linalg.hpp"
#include "hystar/optim.hpp"
#include "hystar/rng.hpp"
#include "hystar/spectral.hpp"
#include "hystar/stylence.hpp"
#include "hystar/tensor.hpp"
#include "hystar/training.hpp"
