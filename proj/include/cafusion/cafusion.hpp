#pragma once

// Umbrella header for the library (the command-line layer in cli.hpp is
// separate because it needs CLI11).

#include <cafusion/numeric.hpp>
#include <cafusion/lstm.hpp>
#include <cafusion/fusion.hpp>
#include <cafusion/pipeline.hpp>
#include <cafusion/data.hpp>
#include <cafusion/prepare.hpp>
#include <cafusion/delay_search.hpp>
#include <cafusion/checkpoint.hpp>
#include <cafusion/training.hpp>
