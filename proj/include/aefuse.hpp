#pragma once

#include "aefuse/arch.hpp"
#include "aefuse/bench.hpp"
#include "aefuse/dataset.hpp"
#include "aefuse/errors.hpp"
#include "aefuse/evolution.hpp"
#include "aefuse/fusion.hpp"
#include "aefuse/image.hpp"
#include "aefuse/layers.hpp"
#include "aefuse/loss.hpp"
#include "aefuse/metrics.hpp"
#include "aefuse/network.hpp"
#include "aefuse/niqe.hpp"
#include "aefuse/optim.hpp"
#include "aefuse/random.hpp"
#include "aefuse/tensor.hpp"
#include "aefuse/trainer.hpp"
