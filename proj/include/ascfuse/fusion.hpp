#pragma once

#include "ascfuse/fusion/features.hpp"
#include "ascfuse/fusion/io.hpp"
#include "ascfuse/fusion/pca.hpp"
#include "ascfuse/fusion/svm.hpp"
