#include "ptq/types.hpp"

namespace ptq {

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::float32: return 4;
        case DType::int8: return 1;
        case DType::int16: return 2;
        case DType::int32: return 4;
    }
    throw Error(ErrorKind::invalid_argument, "unknown dtype code");
}

const char* dtype_name(DType dtype) {
    switch (dtype) {
        case DType::float32: return "float32";
        case DType::int8: return "int8";
        case DType::int16: return "int16";
        case DType::int32: return "int32";
    }
    return "?";
}

const char* method_name(Method m) {
    switch (m) {
        case Method::lq: return "lq";
        case Method::aciq: return "aciq";
        case Method::ocs_naive: return "ocs_naive";
        case Method::ocs_qa: return "ocs_qa";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "lq") return Method::lq;
    if (name == "aciq") return Method::aciq;
    if (name == "ocs_naive") return Method::ocs_naive;
    if (name == "ocs_qa") return Method::ocs_qa;
    throw Error(ErrorKind::invalid_argument, "unknown method '" + name + "'");
}

}  // namespace ptq
