@problemName BadLength
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel true A B
@data
1,2,3:4,5,6:A
1,2,3:4,5:A
