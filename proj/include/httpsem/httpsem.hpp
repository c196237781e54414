#pragma once

#include "capture.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "evalx.hpp"
#include "features.hpp"
#include "forest.hpp"
#include "inference.hpp"
#include "io.hpp"
#include "keyscan.hpp"
#include "problems.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "tls_builder.hpp"
#include "tlsparse.hpp"
