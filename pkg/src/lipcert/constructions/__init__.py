from .boolean import (
    BooleanFunction,
    SymmetricBooleanFunction,
    boolean_cube,
    builtin,
    from_truth_table,
    random_function,
    read_truth_table,
)
from .convert import groupsort_to_sortnet, linfnet_to_sortnet
from .linf_nets import boolean_to_linf_net, literal_disjunction_neuron, nn_classifier_net, order_statistic_linf_net
from .maxmin import batcher_comparators, maxmin_boolean_net, maxmin_order_statistic_net, maxmin_sorting_net
from .standard import (
    PairSet,
    Witness,
    build_pair_set,
    impossibility_dataset,
    impossibility_witness,
    tight_linear_orderstat,
    tight_symmetric_net,
    verify_sum_inequality,
)
