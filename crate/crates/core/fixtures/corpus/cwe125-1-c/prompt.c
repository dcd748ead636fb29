#include <stddef.h>

static const int id_sequence[] = {10, 20, 30, 40};

int get_id(int i) {
    return id_sequence[i];
}
