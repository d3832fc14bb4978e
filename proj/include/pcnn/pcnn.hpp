#pragma once

#include "pcnn/checkpoint.hpp"
#include "pcnn/config.hpp"
#include "pcnn/dataset.hpp"
#include "pcnn/error.hpp"
#include "pcnn/features.hpp"
#include "pcnn/gemm.hpp"
#include "pcnn/image.hpp"
#include "pcnn/layers.hpp"
#include "pcnn/linear.hpp"
#include "pcnn/metrics.hpp"
#include "pcnn/network.hpp"
#include "pcnn/progressive.hpp"
#include "pcnn/report.hpp"
#include "pcnn/rng.hpp"
#include "pcnn/synthetic.hpp"
#include "pcnn/tensor.hpp"
#include "pcnn/training.hpp"
#include "pcnn/transfer.hpp"
