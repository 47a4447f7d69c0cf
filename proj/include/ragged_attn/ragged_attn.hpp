// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ragged_attn/core.hpp"
#include "ragged_attn/tensor_io.hpp"
#include "ragged_attn/reference_attention.hpp"
#include "ragged_attn/ragged_attention.hpp"
#include "ragged_attn/packing.hpp"
#include "ragged_attn/pruning.hpp"
#include "ragged_attn/pipeline.hpp"
#include "ragged_attn/bench.hpp"
#include "ragged_attn/report.hpp"
#include "ragged_attn/equivalence.hpp"
#include "ragged_attn/run_config.hpp"
