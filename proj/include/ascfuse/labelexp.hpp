#pragma once

#include "ascfuse/labelexp/cluster.hpp"
#include "ascfuse/labelexp/expand.hpp"
