#pragma once

#include "qgtc/api.hpp"
#include "qgtc/batch.hpp"
#include "qgtc/bitgemm.hpp"
#include "qgtc/bitpack.hpp"
#include "qgtc/engine.hpp"
#include "qgtc/epilogue.hpp"
#include "qgtc/graph.hpp"
#include "qgtc/partition.hpp"
#include "qgtc/quantizer.hpp"
#include "qgtc/report.hpp"
#include "qgtc/tile.hpp"
#include "qgtc/weights.hpp"
