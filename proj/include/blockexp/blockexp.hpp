// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "blockexp/artifacts.hpp"
#include "blockexp/autodiff.hpp"
#include "blockexp/data.hpp"
#include "blockexp/evaluation.hpp"
#include "blockexp/expansion.hpp"
#include "blockexp/model.hpp"
#include "blockexp/random.hpp"
#include "blockexp/tensor.hpp"
#include "blockexp/training.hpp"
