#include <stdlib.h>

typedef struct {
    char name[64];
    int status;
} person;

person *new_person(void) {
    person *p = malloc(sizeof(person));
    p->status = 0;
    return p;
}
