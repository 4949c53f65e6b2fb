#ifndef MVPCACHE_MVPCACHE_HPP
#define MVPCACHE_MVPCACHE_HPP

#include "mvpcache/error.hpp"
#include "mvpcache/random.hpp"
#include "mvpcache/trace.hpp"
#include "mvpcache/count_models.hpp"
#include "mvpcache/gibbs.hpp"
#include "mvpcache/predictor.hpp"
#include "mvpcache/cachesim.hpp"
#include "mvpcache/synth.hpp"
#include "mvpcache/serialize.hpp"

#endif  // MVPCACHE_MVPCACHE_HPP
