#pragma once

#include "ascfuse/numerics/kmeans.hpp"
#include "ascfuse/numerics/linalg.hpp"
#include "ascfuse/numerics/matrix.hpp"
#include "ascfuse/numerics/rng.hpp"
#include "ascfuse/numerics/tensor_io.hpp"
