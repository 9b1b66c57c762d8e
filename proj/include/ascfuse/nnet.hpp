#pragma once

#include "ascfuse/nnet/checkpoint.hpp"
#include "ascfuse/nnet/config.hpp"
#include "ascfuse/nnet/kernels.hpp"
#include "ascfuse/nnet/loss.hpp"
#include "ascfuse/nnet/network.hpp"
#include "ascfuse/nnet/train.hpp"
