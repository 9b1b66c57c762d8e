#pragma once

#include "ascfuse/pipeline/config.hpp"
#include "ascfuse/pipeline/files.hpp"
#include "ascfuse/pipeline/kfold.hpp"
#include "ascfuse/pipeline/manifest.hpp"
#include "ascfuse/pipeline/parallel.hpp"
#include "ascfuse/pipeline/report.hpp"
#include "ascfuse/pipeline/stages.hpp"
#include "ascfuse/pipeline/synth.hpp"
