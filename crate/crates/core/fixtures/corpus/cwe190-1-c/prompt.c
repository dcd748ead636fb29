#include <stdlib.h>

int bump(const char *arg) {
    int value = atoi(arg) + 100000000;
    return value;
}
