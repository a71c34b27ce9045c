// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "obsprune/calib.hpp"
#include "obsprune/config.hpp"
#include "obsprune/errors.hpp"
#include "obsprune/ffn_pruner.hpp"
#include "obsprune/head_pruner.hpp"
#include "obsprune/linalg.hpp"
#include "obsprune/obs_core.hpp"
#include "obsprune/pipeline.hpp"
#include "obsprune/schedule.hpp"
#include "obsprune/tensorstore.hpp"
#include "obsprune/toy_model.hpp"
#include "obsprune/verify.hpp"
