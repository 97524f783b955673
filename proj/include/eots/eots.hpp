#pragma once

#include "eots/attention_maps.hpp"
#include "eots/embedding.hpp"
#include "eots/eot_analysis.hpp"
#include "eots/error.hpp"
#include "eots/fixtures.hpp"
#include "eots/gradcheck.hpp"
#include "eots/io.hpp"
#include "eots/ito.hpp"
#include "eots/metrics.hpp"
#include "eots/random.hpp"
#include "eots/report.hpp"
#include "eots/spectrum.hpp"
#include "eots/toy_attention.hpp"
