// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dign/autodiff.hpp"
#include "dign/config.hpp"
#include "dign/dgn.hpp"
#include "dign/errors.hpp"
#include "dign/experiments.hpp"
#include "dign/fusion.hpp"
#include "dign/gradcheck.hpp"
#include "dign/graph.hpp"
#include "dign/intervention.hpp"
#include "dign/losses.hpp"
#include "dign/model.hpp"
#include "dign/rng.hpp"
#include "dign/scene_io.hpp"
#include "dign/synthetic.hpp"
#include "dign/tensor.hpp"
#include "dign/trainer.hpp"
