#pragma once

#include "tmag/error.hpp"
#include "tmag/rng.hpp"
#include "tmag/config.hpp"
#include "tmag/envelope.hpp"
#include "tmag/tma.hpp"
#include "tmag/onset.hpp"
#include "tmag/cnn.hpp"
#include "tmag/recording.hpp"
#include "tmag/model.hpp"
#include "tmag/engine.hpp"
#include "tmag/synth.hpp"
#include "tmag/pipeline.hpp"
#include "tmag/io.hpp"
