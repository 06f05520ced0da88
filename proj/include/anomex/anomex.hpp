#pragma once

#include "anomex/dataset.hpp"
#include "anomex/detector.hpp"
#include "anomex/error.hpp"
#include "anomex/evaluation.hpp"
#include "anomex/image.hpp"
#include "anomex/lime.hpp"
#include "anomex/onnx.hpp"
#include "anomex/parallel.hpp"
#include "anomex/pipeline.hpp"
#include "anomex/raster_io.hpp"
#include "anomex/render.hpp"
#include "anomex/segmentation.hpp"
#include "anomex/shap.hpp"
