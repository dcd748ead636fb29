#include <stdio.h>
#include <stdlib.h>

char *read_line(void) {
    char *buf = (char *)malloc(1024);
    fgets(buf, 1024, stdin);
    return buf;
}
