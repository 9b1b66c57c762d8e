#pragma once

#include "ascfuse/dsp/audio.hpp"
#include "ascfuse/dsp/fft.hpp"
#include "ascfuse/dsp/patches.hpp"
#include "ascfuse/dsp/spectrogram.hpp"
