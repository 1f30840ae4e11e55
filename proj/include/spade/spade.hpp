// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spade/ablation.hpp"
#include "spade/checkpoint.hpp"
#include "spade/cli.hpp"
#include "spade/config.hpp"
#include "spade/data.hpp"
#include "spade/grad_check.hpp"
#include "spade/layers.hpp"
#include "spade/losses.hpp"
#include "spade/mask.hpp"
#include "spade/metrics.hpp"
#include "spade/networks.hpp"
#include "spade/norm.hpp"
#include "spade/ops.hpp"
#include "spade/optim.hpp"
#include "spade/pnm.hpp"
#include "spade/rng.hpp"
#include "spade/tensor.hpp"
#include "spade/trainer.hpp"
#include "spade/washaway.hpp"
